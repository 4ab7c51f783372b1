//! Behavior cloning, noisy behavior cloning and collocation training.
//!
//! With `S = Σ_i T_i`:
//!
//! * BC: `(1/2S) Σ_i Σ_{t<T_i} ‖a_t − π(s_t)‖²`
//! * collocation: `state + ν·action` where
//!   `state = (1/2S) Σ_i Σ_{t≤T_i} ‖s_t − s̃_t‖²` and
//!   `action = (1/2S) Σ_i Σ_{t<T_i} ‖ã_t − π(s̃_t)‖²`.
//!
//! An epoch is one shuffled pass over every sample. BC samples are
//! `(i, t)` with `t < T_i`; collocation samples also include `t = T_i`
//! (state term only). Minibatch losses are scaled so that summing them over
//! an epoch reproduces the full objective.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{ArmError, ArmSpec, Dataset, State};
use crate::aux::{AuxDemo, AuxTrajParams, AuxVars};
use crate::diff::{DiffError, Tape, Var};
use crate::math;
use crate::mlp::ParamSet;
use crate::optim::{adam_step, AdamConfig, AdamState, Plateau, PlateauScheduler};
use crate::policy::{Policy, PolicyError, PolicyVars};
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Bc,
    BcNoise,
    Code,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Bc => "bc",
            Method::BcNoise => "bc_noise",
            Method::Code => "code",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub sigma: f64,
    pub fraction: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { sigma: 0.05, fraction: 0.2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub method: Method,
    /// Weight of the action term; `ν = λ·ts²`.
    pub nu: f64,
    pub lr: f64,
    pub lr_decay: f64,
    pub plateau_patience: usize,
    /// Improvement below this does not reset the plateau counter.
    pub plateau_threshold: f64,
    pub lr_min: f64,
    pub max_epochs: usize,
    /// `None` picks 500 below 50 trajectories and 2000 otherwise.
    pub batch_size: Option<usize>,
    pub noise: NoiseConfig,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Alternate policy and auxiliary updates instead of joint steps.
    pub alternating: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Code,
            nu: 1.0,
            lr: 5e-3,
            lr_decay: 0.9,
            plateau_patience: 500,
            plateau_threshold: 1e-12,
            lr_min: 1e-6,
            max_epochs: 50_000,
            batch_size: None,
            noise: NoiseConfig::default(),
            seed: 0,
            adam: AdamConfig::default(),
            alternating: false,
        }
    }
}

impl TrainConfig {
    pub fn batch_size_for(&self, n_trajectories: usize) -> usize {
        self.batch_size.unwrap_or(if n_trajectories < 50 { 500 } else { 2000 })
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |what| Err(TrainError::Config(what));
        if self.method == Method::Code && !(self.nu > 0.0) {
            return bad("nu must be positive for collocation");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr) {
            return bad("need 0 < lr_min <= lr");
        }
        if !(self.noise.fraction > 0.0 && self.noise.fraction <= 1.0) || !(self.noise.sigma >= 0.0) {
            return bad("noise fraction must lie in (0, 1] and sigma be non-negative");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return bad("lr_decay must lie in (0, 1)");
        }
        if self.batch_size == Some(0) || self.plateau_patience == 0 {
            return bad("batch size and patience must be positive");
        }
        Ok(())
    }
}

/// `ν = λ·ts²`
pub fn nu_from_lambda(lambda: f64, ts: f64) -> f64 {
    lambda * ts * ts
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(&'static str),
    #[error("trajectory {0} has no actions")]
    MissingActions(usize),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("collocation training needs auxiliary parameters")]
    MissingAux,
    #[error("auxiliary parameters cover {have} demonstrations, dataset has {want}")]
    AuxMismatch { have: usize, want: usize },
    #[error("loss became non-finite in epoch {epoch}")]
    NonFinite { epoch: usize, last: Box<(Policy, Option<AuxTrajParams>)> },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Arm(#[from] ArmError),
}

/// Flattened `(state, features, action)` rows for regression.
#[derive(Clone, Debug)]
pub struct BcData {
    dof: usize,
    fdim: usize,
    q: Vec<f64>,
    qd: Vec<f64>,
    feats: Vec<f64>,
    actions: Vec<f64>,
    /// `Σ T_i` of the clean trajectories the rows came from.
    pub total_steps: usize,
}

impl BcData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, TrainError> {
        let dof = ds.arm.dof();
        let first = ds.trajectories.first().ok_or(TrainError::EmptyDataset)?;
        let fdim = first.meta.policy_features().len();
        let mut out = BcData { dof, fdim, q: vec![], qd: vec![], feats: vec![], actions: vec![], total_steps: 0 };
        for (i, tr) in ds.trajectories.iter().enumerate() {
            let actions = tr.actions.as_ref().ok_or(TrainError::MissingActions(i))?;
            let f = tr.meta.policy_features();
            for (s, a) in tr.states.iter().zip(actions) {
                out.q.extend_from_slice(&s.q);
                out.qd.extend_from_slice(&s.qd);
                out.feats.extend_from_slice(&f);
                out.actions.extend_from_slice(a);
            }
            out.total_steps += actions.len();
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.actions.len() / self.dof
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    fn rows(&self, src: &[f64], width: usize, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&r| src[r * width..(r + 1) * width].iter().copied()).collect()
    }
}

/// `Σ_batch ‖a − π(s)‖²` on a tape.
pub fn bc_batch_sum(tape: &mut Tape, pv: &PolicyVars, arm: &ArmSpec, data: &BcData, idx: &[usize]) -> Result<Var, DiffError> {
    let (b, d, m) = (idx.len(), data.dof, data.fdim);
    let q = tape.constant(b, d, data.rows(&data.q, d, idx));
    let qd = tape.constant(b, d, data.rows(&data.qd, d, idx));
    let f = tape.constant(b, m, data.rows(&data.feats, m, idx));
    let a = tape.constant(b, d, data.rows(&data.actions, d, idx));
    let pred = pv.forward(tape, arm, q, qd, f)?;
    let r = tape.sub(pred, a)?;
    let sq = tape.square(r);
    Ok(tape.sum_all(sq))
}

/// Behavior-cloning loss over every recorded action.
pub fn bc_loss(policy: &Policy, arm: &ArmSpec, ds: &Dataset) -> Result<f64, TrainError> {
    let mut sum = 0.0;
    let mut steps = 0usize;
    for (i, tr) in ds.trajectories.iter().enumerate() {
        let actions = tr.actions.as_ref().ok_or(TrainError::MissingActions(i))?;
        let f = tr.meta.policy_features();
        for (s, a) in tr.states.iter().zip(actions) {
            let p = policy.eval(arm, s, &f)?;
            sum += p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        steps += actions.len();
    }
    if steps == 0 {
        return Err(TrainError::EmptyDataset);
    }
    Ok(sum / (2.0 * steps as f64))
}

/// Returns the originals followed by noisy copies of `⌈fraction·N⌉`
/// trajectories chosen with `seed`. Copies keep the clean actions as targets
/// and are no longer marked as dynamics-consistent.
pub fn inject_noise(ds: &Dataset, sigma: f64, fraction: f64, seed: u64) -> Dataset {
    let n = ds.len();
    let k = (math::ceil(fraction * n as f64) as usize).min(n);
    let mut rng = seeded(derive_seed(seed, 0x6e6f));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut chosen = order[..k].to_vec();
    chosen.sort_unstable();
    let normal = Normal::new(0.0, sigma.max(0.0)).expect("finite sigma");
    let mut out = ds.clone();
    for i in chosen {
        let mut tr = ds.trajectories[i].clone();
        for s in &mut tr.states {
            for x in s.q.iter_mut().chain(s.qd.iter_mut()) {
                *x += if sigma > 0.0 { normal.sample(&mut rng) } else { 0.0 };
            }
        }
        tr.id |= NOISY_ID_BIT;
        tr.expert = false;
        out.trajectories.push(tr);
    }
    out
}

/// Set on the id of noise-augmented copies.
pub const NOISY_ID_BIT: u64 = 1 << 62;

/// Demonstrations prepared for collocation.
#[derive(Clone, Debug)]
pub struct CodeData {
    pub demos: Vec<AuxDemo>,
    /// `(i, t)` for `t ≤ T_i`.
    pub samples: Vec<(usize, usize)>,
    states: Vec<Vec<State>>,
    actions: Vec<Option<Vec<Vec<f64>>>>,
    feats: Vec<Vec<f64>>,
    pub total_steps: usize,
    dof: usize,
}

impl CodeData {
    pub fn from_dataset(ds: &Dataset) -> Result<Self, TrainError> {
        if ds.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let mut demos = Vec::with_capacity(ds.len());
        let mut samples = Vec::new();
        for (i, tr) in ds.trajectories.iter().enumerate() {
            demos.push(AuxDemo::from_trajectory(&ds.arm, tr)?);
            samples.extend((0..=tr.horizon()).map(|t| (i, t)));
        }
        Ok(Self {
            demos,
            samples,
            states: ds.trajectories.iter().map(|t| t.states.clone()).collect(),
            actions: ds.trajectories.iter().map(|t| t.actions.clone()).collect(),
            feats: ds.trajectories.iter().map(|t| t.meta.policy_features()).collect(),
            total_steps: ds.total_steps(),
            dof: ds.arm.dof(),
        })
    }

    fn target_rows(&self, idx: &[usize]) -> (Vec<f64>, Vec<f64>) {
        let mut q = Vec::with_capacity(idx.len() * self.dof);
        let mut qd = Vec::with_capacity(idx.len() * self.dof);
        for &k in idx {
            let (i, t) = self.samples[k];
            q.extend_from_slice(&self.states[i][t].q);
            qd.extend_from_slice(&self.states[i][t].qd);
        }
        (q, qd)
    }

    fn feature_rows(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter().flat_map(|&k| self.feats[self.samples[k].0].iter().copied()).collect()
    }

    /// 1 where the sample has an action (`t < T_i`), else 0; `B×d`.
    fn action_mask(&self, idx: &[usize]) -> Vec<f64> {
        idx.iter()
            .flat_map(|&k| {
                let (i, t) = self.samples[k];
                let m = if t < self.demos[i].horizon { 1.0 } else { 0.0 };
                core::iter::repeat_n(m, self.dof)
            })
            .collect()
    }
}

/// Where the auxiliary states and actions come from.
pub enum AuxSource<'a> {
    Learned {
        params: &'a AuxTrajParams,
        vars: &'a AuxVars,
    },
    /// The demonstrations themselves, frozen.
    Demos,
}

/// Unscaled batch sums `Σ ‖s − s̃‖²` and `Σ ‖ã − π(s̃)‖²` on a tape.
pub fn code_batch_sums(
    tape: &mut Tape,
    pv: &PolicyVars,
    aux: AuxSource<'_>,
    arm: &ArmSpec,
    data: &CodeData,
    idx: &[usize],
    ts: f64,
) -> Result<(Var, Var), TrainError> {
    let (b, d) = (idx.len(), data.dof);
    let feats = data.feature_rows(idx);
    let m = feats.len() / b;
    let (tq, tqd) = data.target_rows(idx);
    let tq = tape.constant(b, d, tq);
    let tqd = tape.constant(b, d, tqd);
    let (aq, aqd, aa) = match aux {
        AuxSource::Learned { params, vars } => {
            let pairs: Vec<(usize, usize)> = idx.iter().map(|&k| data.samples[k]).collect();
            let batch = vars.sample_batch(tape, params, &data.demos, &pairs, ts)?;
            (batch.q, batch.qd, batch.action)
        }
        AuxSource::Demos => {
            let mut a = Vec::with_capacity(b * d);
            for &k in idx {
                let (i, t) = data.samples[k];
                let acts = data.actions[i].as_ref().ok_or(TrainError::MissingActions(i))?;
                match acts.get(t) {
                    Some(x) => a.extend_from_slice(x),
                    None => a.extend(core::iter::repeat_n(0.0, d)),
                }
            }
            (tq, tqd, tape.constant(b, d, a))
        }
    };
    let dq = tape.sub(tq, aq)?;
    let dqd = tape.sub(tqd, aqd)?;
    let sq1 = tape.square(dq);
    let sq2 = tape.square(dqd);
    let s1 = tape.sum_all(sq1);
    let s2 = tape.sum_all(sq2);
    let state_sum = tape.add(s1, s2)?;

    let f = tape.constant(b, m, feats);
    let pred = pv.forward(tape, arm, aq, aqd, f)?;
    let r = tape.sub(pred, aa)?;
    let mask = tape.constant(b, d, data.action_mask(idx));
    let r = tape.mul(r, mask)?;
    let sq = tape.square(r);
    let action_sum = tape.sum_all(sq);
    Ok((state_sum, action_sum))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodeLoss {
    pub total: f64,
    pub state_term: f64,
    pub action_term: f64,
}

/// Full collocation objective evaluated sample by sample.
pub fn code_loss(policy: &Policy, aux: &AuxTrajParams, arm: &ArmSpec, ds: &Dataset, nu: f64) -> Result<CodeLoss, TrainError> {
    let (mut state, mut action) = (0.0, 0.0);
    for (i, tr) in ds.trajectories.iter().enumerate() {
        let demo = AuxDemo::from_trajectory(arm, tr)?;
        let (states, actions) = aux.sample_trajectory(&demo, i, tr.ts)?;
        for (s, a) in tr.states.iter().zip(&states) {
            let dist = s.distance(a);
            state += dist * dist;
        }
        let f = tr.meta.policy_features();
        for (s, a) in states.iter().zip(&actions) {
            let p = policy.eval(arm, s, &f)?;
            action += p.iter().zip(a).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
    }
    let norm = 1.0 / (2.0 * ds.total_steps() as f64);
    let (state_term, action_term) = (state * norm, action * norm);
    Ok(CodeLoss { total: state_term + nu * action_term, state_term, action_term })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub state_term: f64,
    pub action_term: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    /// Plateau reached at the minimum learning rate.
    Converged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub stop: StopReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub aux: Option<AuxTrajParams>,
    pub history: TrainHistory,
}

enum Objective {
    Bc(BcData),
    Code(CodeData),
}

impl Objective {
    fn sample_count(&self) -> usize {
        match self {
            Objective::Bc(d) => d.len(),
            Objective::Code(d) => d.samples.len(),
        }
    }

    fn total_steps(&self) -> usize {
        match self {
            Objective::Bc(d) => d.len(),
            Objective::Code(d) => d.total_steps,
        }
    }
}

fn nonfinite(epoch: usize, policy: &Policy, aux: &Option<AuxTrajParams>) -> TrainError {
    TrainError::NonFinite { epoch, last: Box::new((policy.clone(), aux.clone())) }
}

/// Trains `policy` (and `aux` for collocation) on `ds`.
pub fn train(ds: &Dataset, policy: Policy, aux: Option<AuxTrajParams>, cfg: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    train_observed(ds, policy, aux, cfg, &mut |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    ds: &Dataset,
    mut policy: Policy,
    mut aux: Option<AuxTrajParams>,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let arm = &ds.arm;
    let ts = ds.ts;
    let objective = match cfg.method {
        Method::Bc => Objective::Bc(BcData::from_dataset(ds)?),
        Method::BcNoise => {
            let noisy = inject_noise(ds, cfg.noise.sigma, cfg.noise.fraction, cfg.seed);
            Objective::Bc(BcData::from_dataset(&noisy)?)
        }
        Method::Code => {
            let a = aux.as_ref().ok_or(TrainError::MissingAux)?;
            if let Some(have) = a.demo_count() {
                if have != ds.len() {
                    return Err(TrainError::AuxMismatch { have, want: ds.len() });
                }
            }
            Objective::Code(CodeData::from_dataset(ds)?)
        }
    };
    if cfg.method != Method::Code {
        aux = None;
    }
    let n_samples = objective.sample_count();
    let batch = cfg.batch_size_for(ds.len()).min(n_samples).max(1);
    let norm = 1.0 / (2.0 * objective.total_steps() as f64);
    // batch sums scaled by this estimate the full objective
    let batch_scale = |b: usize| norm * n_samples as f64 / b as f64;

    let policy_sizes = policy.tensor_sizes();
    let aux_sizes = aux.as_ref().map(ParamSet::tensor_sizes).unwrap_or_default();
    let mut joint_state = AdamState::new(policy_sizes.iter().chain(&aux_sizes).copied());
    let mut policy_state = AdamState::new(policy_sizes.iter().copied());
    let mut aux_state = AdamState::new(aux_sizes.iter().copied());
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_decay, cfg.plateau_patience, cfg.lr_min, cfg.plateau_threshold);
    let mut rng = seeded(derive_seed(cfg.seed, 0x7472));
    let mut order: Vec<usize> = (0..n_samples).collect();
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut step_count = 0usize;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let lr = sched.lr();
        let (mut state_acc, mut action_acc) = (0.0, 0.0);
        for idx in order.chunks(batch) {
            let mut tape = Tape::new();
            let pv = policy.bind(&mut tape);
            let av = aux.as_ref().map(|a| a.bind(&mut tape));
            let (state_sum, action_sum) = match &objective {
                Objective::Bc(data) => (None, bc_batch_sum(&mut tape, &pv, arm, data, idx)?),
                Objective::Code(data) => {
                    let src = AuxSource::Learned { params: aux.as_ref().expect("aux present"), vars: av.as_ref().expect("aux bound") };
                    let (s, a) = code_batch_sums(&mut tape, &pv, src, arm, data, idx, ts)?;
                    (Some(s), a)
                }
            };
            let s_val = state_sum.map_or(0.0, |v| tape.scalar(v));
            let a_val = tape.scalar(action_sum);
            if !(s_val.is_finite() && a_val.is_finite()) {
                return Err(nonfinite(epoch, &policy, &aux));
            }
            state_acc += s_val;
            action_acc += a_val;
            let weighted = match state_sum {
                Some(s) => {
                    let a = tape.scale(action_sum, cfg.nu);
                    tape.add(s, a)?
                }
                None => action_sum,
            };
            let root = tape.scale(weighted, batch_scale(idx.len()));
            let grads = tape.backward(root)?;
            let pg = pv.gradient(&grads, &policy);
            let ag = match (&av, &aux) {
                (Some(v), Some(a)) => Some(v.gradient(&grads, a)),
                _ => None,
            };
            let update_policy = !cfg.alternating || aux.is_none() || step_count.is_multiple_of(2);
            let update_aux = !cfg.alternating || !step_count.is_multiple_of(2);
            let result = if !cfg.alternating || aux.is_none() {
                let mut params = policy.tensors_mut();
                let mut g = pg.tensors();
                if let (Some(a), Some(ag)) = (aux.as_mut(), ag.as_ref()) {
                    params.extend(a.tensors_mut());
                    g.extend(ag.tensors());
                }
                adam_step(&mut params, &g, &mut joint_state, lr, &cfg.adam)
            } else if update_policy {
                adam_step(&mut policy.tensors_mut(), &pg.tensors(), &mut policy_state, lr, &cfg.adam)
            } else if let (true, Some(a), Some(ag)) = (update_aux, aux.as_mut(), ag.as_ref()) {
                adam_step(&mut a.tensors_mut(), &ag.tensors(), &mut aux_state, lr, &cfg.adam)
            } else {
                Ok(())
            };
            if let Err(DiffError::NonFinite { .. }) = result {
                return Err(nonfinite(epoch, &policy, &aux));
            }
            result?;
            step_count += 1;
        }
        let rec = match cfg.method {
            Method::Code => {
                let (s, a) = (state_acc * norm, action_acc * norm);
                EpochRecord { epoch, total: s + cfg.nu * a, state_term: s, action_term: a, lr }
            }
            _ => {
                let a = action_acc * norm;
                EpochRecord { epoch, total: a, state_term: 0.0, action_term: a, lr }
            }
        };
        observe(&rec);
        epochs.push(rec);
        if sched.observe(rec.total) == Plateau::Exhausted {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(TrainOutcome { policy, aux, history: TrainHistory { epochs, stop } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::arm::{Provenance, TaskMeta, Trajectory};
    use crate::aux::AuxMode;
    use crate::linalg::Matrix;
    use crate::mlp::{Activation, Layer, MlpParams};
    use crate::policy::{NnPolicy, PolicyClass};

    fn one_step_dataset(action: f64) -> Dataset {
        let meta = TaskMeta { start_ee: [0.0; 3], goal_ee: [0.0; 3], features: vec![] };
        let s0 = State::rest(vec![0.0, 0.0]);
        let s1 = crate::arm::step(&s0, &[action, 0.0], 0.1).unwrap();
        let tr = Trajectory { id: 0, ts: 0.1, states: vec![s0, s1], actions: Some(vec![vec![action, 0.0]]), meta, expert: true };
        Dataset { ts: 0.1, arm: ArmSpec::default(), trajectories: vec![tr], provenance: Provenance::default() }
    }

    fn zero_policy() -> Policy {
        let w = Matrix::zeros(2, 6);
        Policy::Nn(NnPolicy::new(MlpParams::new(vec![Layer { weight: w, bias: vec![0.0; 2] }], Activation::Identity).unwrap(), 2, 2).unwrap())
    }

    #[test]
    fn bc_loss_examples() {
        let ds = one_step_dataset(1.0);
        assert!((bc_loss(&zero_policy(), &ds.arm, &ds).unwrap() - 0.5).abs() < 1e-15);
        let ds2 = one_step_dataset(2.0);
        assert!((bc_loss(&zero_policy(), &ds2.arm, &ds2).unwrap() - 2.0).abs() < 1e-15);
        let mut missing = ds.clone();
        missing.trajectories[0].actions = None;
        assert_eq!(bc_loss(&zero_policy(), &ds.arm, &missing).unwrap_err(), TrainError::MissingActions(0));
    }

    #[test]
    fn noise_counts_and_determinism() {
        let mut ds = one_step_dataset(1.0);
        for k in 1..5 {
            let mut t = ds.trajectories[0].clone();
            t.id = k;
            ds.trajectories.push(t);
        }
        let all = inject_noise(&ds, 0.05, 1.0, 3);
        assert_eq!(all.len(), 10);
        assert_eq!(inject_noise(&ds, 0.05, 1.0, 3), all);
        assert_eq!(inject_noise(&ds, 0.05, 0.2, 3).len(), 6);
        let clean = inject_noise(&ds, 0.0, 1.0, 3);
        for k in 0..5 {
            assert_eq!(clean.trajectories[5 + k].states, ds.trajectories[k].states);
        }
        assert_eq!(all.trajectories[7].actions, ds.trajectories[2].actions);
    }

    #[test]
    fn frozen_demos_give_bc_action_term() {
        let ds = one_step_dataset(1.0);
        let data = CodeData::from_dataset(&ds).unwrap();
        let bc = BcData::from_dataset(&ds).unwrap();
        let pol = Policy::init(PolicyClass::Nn, 2, 2, &[5], &mut seeded(2));
        let mut tape = Tape::new();
        let pv = pol.bind(&mut tape);
        let idx: Vec<usize> = (0..data.samples.len()).collect();
        let (s, a) = code_batch_sums(&mut tape, &pv, AuxSource::Demos, &ds.arm, &data, &idx, ds.ts).unwrap();
        let b = bc_batch_sum(&mut tape, &pv, &ds.arm, &bc, &[0]).unwrap();
        assert_eq!(tape.scalar(s), 0.0);
        assert_eq!(tape.scalar(a), tape.scalar(b));
    }

    #[test]
    fn code_loss_perfect_and_unit_examples() {
        let ds = one_step_dataset(1.0);
        let aux = AuxTrajParams::init(AuxMode::Joint, 2, 1, 5, &[4], 0.01, true, &mut seeded(1));
        let l = code_loss(&zero_policy(), &aux, &ds.arm, &ds, 3.0).unwrap();
        assert!(l.state_term >= 0.0 && l.action_term >= 0.0);
        assert!((l.total - (l.state_term + 3.0 * l.action_term)).abs() < 1e-15);
        assert_eq!(nu_from_lambda(1e4, 0.01), 1.0);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainConfig { nu: 0.0, ..TrainConfig::default() };
        assert!(c.validate().is_err());
        c.nu = 1.0;
        assert!(c.validate().is_ok());
        c.lr_min = 1.0;
        assert!(c.validate().is_err());
        assert_eq!(TrainConfig::default().batch_size_for(49), 500);
        assert_eq!(TrainConfig::default().batch_size_for(50), 2000);
    }
}
