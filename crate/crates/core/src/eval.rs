//! Rollout diagnostics and audits of the compounding-error bounds.
//!
//! Deviations between states are full-state Euclidean norms over `(q, q̇)`.
//! RMSE is position-only, `√( (1/(T+1)) Σ_t ‖q̂_t − q_t‖² / d )`, i.e. the
//! root of the mean squared per-joint error.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::arm::{rollout, step, ArmSpec, Dataset, Replay, State, Trajectory};
use crate::aux::{AuxDemo, AuxTrajParams};
use crate::math;
use crate::policy::{Policy, PolicyError};
use crate::rng::Rng;

/// Policy rollout from a demonstration's first state for its horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    /// States up to the divergence point when the rollout failed.
    pub states: Vec<State>,
    pub diverged_at: Option<usize>,
}

pub fn rollout_policy(policy: &Policy, arm: &ArmSpec, demo: &Trajectory) -> Rollout {
    let horizon = demo.horizon();
    let mut ctrl = policy.controller(arm);
    match rollout(&mut ctrl, demo.states[0].clone(), &demo.meta, horizon, demo.ts) {
        Ok(tr) => Rollout { states: tr.states, diverged_at: None },
        Err(e) => {
            let at = match e {
                crate::arm::ArmError::ControllerNonFinite { step } | crate::arm::ArmError::Controller { step, .. } => step,
                _ => 0,
            };
            // replay up to the failing step so callers can still inspect it
            let mut states = vec![demo.states[0].clone()];
            for t in 0..at {
                let s = &states[t];
                let next = policy.eval(arm, s, &demo.meta.policy_features()).ok().and_then(|a| step(s, &a, demo.ts).ok());
                match next {
                    Some(n) => states.push(n),
                    None => break,
                }
            }
            Rollout { states, diverged_at: Some(at) }
        }
    }
}

/// Position-only RMSE between two state sequences of equal length.
pub fn position_rmse(a: &[State], b: &[State]) -> f64 {
    let d = a.first().map_or(1, State::dof).max(1);
    let sum: f64 = a.iter().zip(b).map(|(x, y)| x.q.iter().zip(&y.q).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / d as f64).sum();
    math::sqrt(sum / a.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmseResult {
    /// Infinite when the rollout diverged.
    pub rmse: f64,
    pub diverged_at: Option<usize>,
}

pub fn rollout_rmse(policy: &Policy, arm: &ArmSpec, demo: &Trajectory) -> RmseResult {
    let r = rollout_policy(policy, arm, demo);
    match r.diverged_at {
        Some(at) => RmseResult { rmse: f64::INFINITY, diverged_at: Some(at) },
        None => RmseResult { rmse: position_rmse(&r.states, &demo.states), diverged_at: None },
    }
}

/// Linear-interpolation quantile of sorted data (the common "type 7").
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p;
            let lo = h as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q25: Vec<f64>,
    pub q50: Vec<f64>,
    pub q75: Vec<f64>,
}

impl Quantiles {
    /// Per-step quartiles of `curves`, skipping curves past their end.
    pub fn of(curves: &[Vec<f64>]) -> Self {
        let len = curves.iter().map(Vec::len).max().unwrap_or(0);
        let mut out = Quantiles::default();
        for t in 0..len {
            let mut col: Vec<f64> = curves.iter().filter_map(|c| c.get(t).copied()).collect();
            col.sort_by(f64::total_cmp);
            out.q25.push(quantile_sorted(&col, 0.25));
            out.q50.push(quantile_sorted(&col, 0.5));
            out.q75.push(quantile_sorted(&col, 0.75));
        }
        out
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DeviationCurves {
    /// `‖ŝ_t − s_t‖` over `(q, q̇)`.
    pub full_state: Quantiles,
    /// `‖q̂_t − q_t‖ / √d`.
    pub per_joint: Quantiles,
}

/// Per-step deviation quartiles of policy rollouts from the demonstrations.
/// Diverged rollouts contribute up to their last finite state.
pub fn deviation_curve(policy: &Policy, arm: &ArmSpec, ds: &Dataset) -> DeviationCurves {
    let rollouts: Vec<Rollout> = ds.trajectories.iter().map(|t| rollout_policy(policy, arm, t)).collect();
    deviation_of(ds, &rollouts)
}

fn deviation_of(ds: &Dataset, rollouts: &[Rollout]) -> DeviationCurves {
    let mut full = Vec::with_capacity(ds.len());
    let mut joint = Vec::with_capacity(ds.len());
    for (demo, r) in ds.trajectories.iter().zip(rollouts) {
        let d = math::sqrt(demo.dof().max(1) as f64);
        full.push(r.states.iter().zip(&demo.states).map(|(a, b)| a.distance(b)).collect());
        joint.push(
            r.states
                .iter()
                .zip(&demo.states)
                .map(|(a, b)| math::sqrt(a.q.iter().zip(&b.q).map(|(x, y)| (x - y) * (x - y)).sum::<f64>()) / d)
                .collect(),
        );
    }
    DeviationCurves { full_state: Quantiles::of(&full), per_joint: Quantiles::of(&joint) }
}

/// Fraction of rollouts ending within `radius` of their goal.
pub fn success_rate(policy: &Policy, arm: &ArmSpec, ds: &Dataset, radius: f64) -> f64 {
    let rollouts: Vec<Rollout> = ds.trajectories.iter().map(|t| rollout_policy(policy, arm, t)).collect();
    success_of(arm, ds, &rollouts, radius)
}

fn success_of(arm: &ArmSpec, ds: &Dataset, rollouts: &[Rollout], radius: f64) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let hits = ds
        .trajectories
        .iter()
        .zip(rollouts)
        .filter(|(demo, r)| {
            if r.diverged_at.is_some() {
                return false;
            }
            let g = demo.meta.goal_position();
            match r.states.last().and_then(|s| arm.fk_position(&s.q).ok()) {
                Some(p) => math::hypot(p[0] - g[0], p[1] - g[1]) < radius,
                None => false,
            }
        })
        .count();
    hits as f64 / ds.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LipschitzKind {
    /// From the spectral bound of the policy network.
    Certified,
    /// Largest ratio over sampled nearby state pairs; not a guarantee.
    Estimated,
}

/// Closed-loop step `f(s, π(s))`.
fn closed_loop(policy: &Policy, arm: &ArmSpec, s: &State, features: &[f64], ts: f64) -> Result<State, PolicyError> {
    let a = policy.eval(arm, s, features)?;
    Ok(step(s, &a, ts)?)
}

/// Max over sampled pairs `(s, s + r·u)` around the demonstration states of
/// `‖f(s,π(s)) − f(s′,π(s′))‖ / ‖s − s′‖`, with `r` log-uniform in `[1e-4, 1e-1]`.
pub fn estimate_lipschitz(policy: &Policy, arm: &ArmSpec, ds: &Dataset, pairs: usize, rng: &mut Rng) -> Result<f64, PolicyError> {
    let all: Vec<(usize, usize)> = ds.trajectories.iter().enumerate().flat_map(|(i, tr)| (0..tr.states.len()).map(move |t| (i, t))).collect();
    let mut best = 0.0_f64;
    if all.is_empty() {
        return Ok(best);
    }
    for _ in 0..pairs {
        let (i, t) = all[rng.random_range(0..all.len())];
        let tr = &ds.trajectories[i];
        let s = &tr.states[t];
        let d = s.dof();
        let mut u: Vec<f64> = (0..2 * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = math::norm(&u).max(1e-12);
        let r = math::exp(rng.random_range(math::ln(1e-4)..math::ln(1e-1)));
        u.iter_mut().for_each(|x| *x *= r / n);
        let s2 = State { q: (0..d).map(|k| s.q[k] + u[k]).collect(), qd: (0..d).map(|k| s.qd[k] + u[d + k]).collect() };
        let f = tr.meta.policy_features();
        let a = closed_loop(policy, arm, s, &f, tr.ts)?;
        let b = closed_loop(policy, arm, &s2, &f, tr.ts)?;
        let den = s.distance(&s2);
        if den > 0.0 {
            best = best.max(a.distance(&b) / den);
        }
    }
    Ok(best)
}

/// Per-trajectory bound bookkeeping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryAudit {
    pub id: u64,
    pub horizon: usize,
    /// Rollout stopped early; the checks cover the finite prefix.
    pub diverged_at: Option<usize>,
    /// `min_t (ε + L·d_t − d_{t+1})`
    pub recursion_margin: f64,
    /// Geometric-sum bound minus `Σ_t d_t`.
    pub cumulative_margin: f64,
    /// `Σ‖s̃−s‖ + Σ‖ŝ−s̃‖ − Σ‖ŝ−s‖`, present with auxiliary trajectories.
    pub split_margin: Option<f64>,
    /// `min_t (δ + L·e_t − e_{t+1})` against the auxiliary trajectory.
    pub aux_recursion_margin: Option<f64>,
    /// Bound `κ(T+1) + Σ_t (L^t e_0 + Σ_{τ<t} L^τ δ)` minus `Σ‖ŝ−s‖`.
    pub aux_bound_margin: Option<f64>,
    /// `‖s̃_0 − s_0‖`, nonzero because `q̇̃_0` is a central difference.
    pub aux_initial_offset: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundAudit {
    pub lipschitz: f64,
    pub kind: LipschitzKind,
    /// Max one-step error of the policy on the demonstrations.
    pub epsilon: f64,
    /// Max one-step error on the auxiliary trajectories.
    pub delta: Option<f64>,
    /// Max demonstration–auxiliary deviation.
    pub kappa: Option<f64>,
    /// Per step, the smallest recursion margin over trajectories.
    pub step_margins: Vec<f64>,
    pub trajectories: Vec<TrajectoryAudit>,
}

/// Tolerance on the triangle-inequality split.
pub const SPLIT_TOL: f64 = 1e-9;

impl BoundAudit {
    pub fn recursion_holds(&self) -> bool {
        self.trajectories.iter().all(|t| t.recursion_margin >= 0.0)
    }

    pub fn cumulative_holds(&self) -> bool {
        self.trajectories.iter().all(|t| t.cumulative_margin >= 0.0)
    }

    pub fn split_holds(&self) -> bool {
        self.trajectories.iter().all(|t| t.split_margin.is_none_or(|m| m >= -SPLIT_TOL))
    }

    pub fn aux_bound_holds(&self) -> bool {
        self.trajectories.iter().all(|t| t.aux_bound_margin.is_none_or(|m| m >= 0.0) && t.aux_recursion_margin.is_none_or(|m| m >= 0.0))
    }

    pub fn worst_recursion_margin(&self) -> f64 {
        self.trajectories.iter().map(|t| t.recursion_margin).fold(f64::INFINITY, f64::min)
    }

    pub fn worst_split_margin(&self) -> Option<f64> {
        self.trajectories.iter().filter_map(|t| t.split_margin).reduce(f64::min)
    }
}

/// `Σ_{t=0}^{T} (L^t·e0 + Σ_{τ<t} L^τ·δ)`
fn geometric_total(l: f64, e0: f64, delta: f64, horizon: usize) -> f64 {
    let (mut pow, mut partial, mut total) = (1.0, 0.0, 0.0);
    for _ in 0..=horizon {
        total += pow * e0 + partial * delta;
        partial += pow;
        pow *= l;
    }
    total
}

fn one_step_errors(policy: &Policy, arm: &ArmSpec, states: &[State], features: &[f64], ts: f64) -> Result<f64, PolicyError> {
    let mut worst = 0.0_f64;
    for w in states.windows(2) {
        worst = worst.max(closed_loop(policy, arm, &w[0], features, ts)?.distance(&w[1]));
    }
    Ok(worst)
}

/// Checks the per-step recursion `d_{t+1} ≤ ε + L·d_t`, its cumulative
/// geometric form, and, given auxiliary trajectories, the triangle split
/// `Σ‖ŝ−s‖ ≤ Σ‖s̃−s‖ + Σ‖ŝ−s̃‖` and the bound built from `δ`, `κ` and `e_0`.
pub fn theorem_audit(
    policy: &Policy,
    arm: &ArmSpec,
    ds: &Dataset,
    aux: Option<&AuxTrajParams>,
    lipschitz: f64,
    kind: LipschitzKind,
) -> Result<BoundAudit, PolicyError> {
    let mut rollouts = Vec::with_capacity(ds.len());
    let mut aux_states = Vec::new();
    let mut epsilon = 0.0_f64;
    let mut delta = 0.0_f64;
    let mut kappa = 0.0_f64;
    for (i, tr) in ds.trajectories.iter().enumerate() {
        let f = tr.meta.policy_features();
        epsilon = epsilon.max(one_step_errors(policy, arm, &tr.states, &f, tr.ts)?);
        if let Some(a) = aux {
            let demo = AuxDemo::from_trajectory(arm, tr)?;
            let (states, _) = a.sample_trajectory(&demo, i, tr.ts)?;
            delta = delta.max(one_step_errors(policy, arm, &states, &f, tr.ts)?);
            kappa = states.iter().zip(&tr.states).fold(kappa, |k, (x, y)| k.max(x.distance(y)));
            aux_states.push(states);
        }
        rollouts.push(rollout_policy(policy, arm, tr));
    }
    let l = lipschitz;
    let max_len = ds.trajectories.iter().map(|t| t.horizon()).max().unwrap_or(0);
    let mut step_margins = vec![f64::INFINITY; max_len];
    let mut out = Vec::with_capacity(ds.len());
    for (i, tr) in ds.trajectories.iter().enumerate() {
        let r = &rollouts[i];
        let n = r.states.len();
        let dev: Vec<f64> = r.states.iter().zip(&tr.states).map(|(a, b)| a.distance(b)).collect();
        let mut recursion_margin = f64::INFINITY;
        for t in 0..n.saturating_sub(1) {
            let m = epsilon + l * dev[t] - dev[t + 1];
            recursion_margin = recursion_margin.min(m);
            step_margins[t] = step_margins[t].min(m);
        }
        let measured: f64 = dev.iter().sum();
        let cumulative_margin = geometric_total(l, 0.0, epsilon, n - 1) - measured;
        let (mut split_margin, mut aux_recursion_margin, mut aux_bound_margin, mut aux_initial_offset) = (None, None, None, None);
        if aux.is_some() {
            let at = &aux_states[i];
            let to_aux: Vec<f64> = r.states.iter().zip(at).map(|(a, b)| a.distance(b)).collect();
            let aux_dev: f64 = at.iter().zip(&tr.states).take(n).map(|(a, b)| a.distance(b)).sum();
            split_margin = Some(aux_dev + to_aux.iter().sum::<f64>() - measured);
            let mut m = f64::INFINITY;
            for t in 0..n.saturating_sub(1) {
                m = m.min(delta + l * to_aux[t] - to_aux[t + 1]);
            }
            aux_recursion_margin = Some(m);
            let e0 = to_aux[0];
            aux_initial_offset = Some(e0);
            aux_bound_margin = Some(kappa * n as f64 + geometric_total(l, e0, delta, n - 1) - measured);
        }
        out.push(TrajectoryAudit {
            id: tr.id,
            horizon: tr.horizon(),
            diverged_at: r.diverged_at,
            recursion_margin,
            cumulative_margin,
            split_margin,
            aux_recursion_margin,
            aux_bound_margin,
            aux_initial_offset,
        });
    }
    Ok(BoundAudit { lipschitz: l, kind, epsilon, delta: aux.map(|_| delta), kappa: aux.map(|_| kappa), step_margins, trajectories: out })
}

/// Everything reported for one policy on one evaluation set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub trajectory_ids: Vec<u64>,
    /// Position-only RMSE per trajectory, rad.
    pub rmse: Vec<f64>,
    pub diverged_at: Vec<Option<usize>>,
    pub deviation: DeviationCurves,
    /// Full-state deviation at step `⌊T/4⌋` of each trajectory (∞ if diverged).
    pub deviation_quarter: Vec<f64>,
    /// Full-state deviation at each trajectory's final step (∞ if diverged).
    pub deviation_final: Vec<f64>,
    pub success_rate: f64,
    pub success_radius: f64,
    pub audit: Option<BoundAudit>,
}

/// Quartiles of a sample, unsorted input.
pub fn quartiles(values: &[f64]) -> [f64; 3] {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    [quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75)]
}

impl EvalReport {
    pub fn median_rmse(&self) -> f64 {
        quartiles(&self.rmse)[1]
    }
}

pub const RMSE_NORMALIZATION: &str = "sqrt(mean over steps t=0..T of sum_k (qhat_t,k - q_t,k)^2 / d)";

pub fn evaluate(policy: &Policy, arm: &ArmSpec, ds: &Dataset, radius: f64) -> EvalReport {
    let rollouts: Vec<Rollout> = ds.trajectories.iter().map(|t| rollout_policy(policy, arm, t)).collect();
    report_of(arm, ds, &rollouts, radius)
}

/// [`evaluate`] for a controller that replays each demonstration's own actions.
pub fn evaluate_replay(arm: &ArmSpec, ds: &Dataset, radius: f64) -> EvalReport {
    let rollouts: Vec<Rollout> = ds.trajectories.iter().map(replay_rollout).collect();
    report_of(arm, ds, &rollouts, radius)
}

fn replay_rollout(demo: &Trajectory) -> Rollout {
    let Some(actions) = &demo.actions else {
        return Rollout { states: vec![demo.states[0].clone()], diverged_at: Some(0) };
    };
    let mut ctrl = Replay(actions);
    match rollout(&mut ctrl, demo.states[0].clone(), &demo.meta, demo.horizon(), demo.ts) {
        Ok(tr) => Rollout { states: tr.states, diverged_at: None },
        Err(_) => Rollout { states: vec![demo.states[0].clone()], diverged_at: Some(0) },
    }
}

fn report_of(arm: &ArmSpec, ds: &Dataset, rollouts: &[Rollout], radius: f64) -> EvalReport {
    let rmse = ds
        .trajectories
        .iter()
        .zip(rollouts)
        .map(|(demo, r)| match r.diverged_at {
            Some(_) => f64::INFINITY,
            None => position_rmse(&r.states, &demo.states),
        })
        .collect();
    let at = |demo: &Trajectory, r: &Rollout, t: usize| match r.diverged_at {
        Some(_) => f64::INFINITY,
        None => r.states[t].distance(&demo.states[t]),
    };
    EvalReport {
        trajectory_ids: ds.trajectories.iter().map(|t| t.id).collect(),
        rmse,
        deviation_quarter: ds.trajectories.iter().zip(rollouts).map(|(d, r)| at(d, r, d.horizon() / 4)).collect(),
        deviation_final: ds.trajectories.iter().zip(rollouts).map(|(d, r)| at(d, r, d.horizon())).collect(),
        diverged_at: rollouts.iter().map(|r| r.diverged_at).collect(),
        deviation: deviation_of(ds, rollouts),
        success_rate: success_of(arm, ds, rollouts, radius),
        success_radius: radius,
        audit: None,
    }
}
