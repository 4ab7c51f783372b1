//! Acceleration policies: a plain network on `[q, q̇, features]` and a
//! two-subtask Riemannian motion policy fused by weighted least squares.
//!
//! Task features are [`TaskMeta::policy_features`]: goal position first,
//! then any extra descriptors.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arm::{ArmError, ArmSpec, Controller, State, TaskMeta};
use crate::diff::{lower_from_packed, DiffError, FuseTerm, Gradients, Tape, Var};
use crate::linalg::{pinv_sym_solve, Matrix};
use crate::math;
use crate::mlp::{Activation, MlpParams, MlpVars, ParamSet};
use crate::rng::Rng;

/// Added to the diagonal of every learned Cholesky factor.
pub const DIAG_OFFSET: f64 = 1e-5;
/// Eigenvalues at or below this fraction of the largest are dropped.
pub const PINV_CUTOFF: f64 = 1e-10;

/// `√(2(1 + (1 + β²)·ts²))`
pub fn closed_loop_lipschitz(beta: f64, ts: f64) -> f64 {
    math::sqrt(2.0 * (1.0 + (1.0 + beta * beta) * ts * ts))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NnPolicy {
    pub net: MlpParams,
    dof: usize,
    feature_dim: usize,
}

impl NnPolicy {
    pub fn new(net: MlpParams, dof: usize, feature_dim: usize) -> Result<Self, DiffError> {
        if net.input_dim() != 2 * dof + feature_dim || net.output_dim() != dof {
            return Err(DiffError::Shape { op: "NnPolicy::new", detail: "network must map 2d+m inputs to d outputs" });
        }
        Ok(Self { net, dof, feature_dim })
    }

    pub fn init(dof: usize, feature_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let mut sizes = vec![2 * dof + feature_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(dof);
        Self { net: MlpParams::init(&sizes, Activation::Elu, rng), dof, feature_dim }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn eval(&self, state: &State, features: &[f64]) -> Result<Vec<f64>, DiffError> {
        let mut x = state.to_vec();
        x.extend_from_slice(features);
        self.net.forward(&x)
    }

    /// Certified closed-loop constant from the network's spectral bound.
    pub fn lipschitz(&self, ts: f64) -> Result<f64, DiffError> {
        Ok(closed_loop_lipschitz(self.net.spectral_bound()?, ts))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubtaskMap {
    /// `x = fk(q) − x_g`, two-dimensional.
    EeGoal,
    /// `x = q`.
    CspaceResidual,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subtask {
    pub map: SubtaskMap,
    pub accel_net: MlpParams,
    pub cholesky_net: MlpParams,
    pub diag_offset: f64,
}

impl Subtask {
    /// Task-space dimension.
    pub fn dim(&self, dof: usize) -> usize {
        match self.map {
            SubtaskMap::EeGoal => 2,
            SubtaskMap::CspaceResidual => dof,
        }
    }

    fn input_dim(&self, dof: usize, feature_dim: usize) -> usize {
        match self.map {
            SubtaskMap::EeGoal => 4,
            SubtaskMap::CspaceResidual => 2 * dof + feature_dim,
        }
    }
}

/// Subtask acceleration, metric, Jacobian and curvature at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct SubtaskRmp {
    pub accel: Vec<f64>,
    pub metric: Matrix,
    pub jac: Matrix,
    pub curv: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Resolved {
    pub accel: Vec<f64>,
    /// Rank kept by the pseudo-inverse; zero when every metric vanished.
    pub rank: usize,
}

impl Resolved {
    pub fn degenerate(&self) -> bool {
        self.rank == 0
    }
}

/// `(Σ JᵀMJ)† Σ JᵀM(a − curv)`.
pub fn rmp_resolve(terms: &[SubtaskRmp], dof: usize) -> Resolved {
    let mut metric = Matrix::zeros(dof, dof);
    let mut rhs = vec![0.0; dof];
    for t in terms {
        let mj = t.metric.matmul(&t.jac);
        metric.add_assign(&t.jac.transpose().matmul(&mj));
        let r: Vec<f64> = t.accel.iter().zip(&t.curv).map(|(a, c)| a - c).collect();
        let jmr = t.jac.tr_matvec(&t.metric.matvec(&r));
        rhs.iter_mut().zip(&jmr).for_each(|(a, b)| *a += b);
    }
    let sol = pinv_sym_solve(&metric, &rhs, PINV_CUTOFF);
    Resolved { accel: sol.x, rank: sol.rank }
}

/// `Σ ½‖J q̈ + curv − a‖²_M`, the objective [`rmp_resolve`] minimizes.
pub fn rmp_objective(terms: &[SubtaskRmp], qdd: &[f64]) -> f64 {
    terms
        .iter()
        .map(|t| {
            let jq = t.jac.matvec(qdd);
            let e: Vec<f64> = jq.iter().zip(&t.curv).zip(&t.accel).map(|((j, c), a)| j + c - a).collect();
            let me = t.metric.matvec(&e);
            0.5 * e.iter().zip(&me).map(|(a, b)| a * b).sum::<f64>()
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RmpPolicy {
    pub subtasks: Vec<Subtask>,
    dof: usize,
    feature_dim: usize,
}

impl RmpPolicy {
    pub fn new(subtasks: Vec<Subtask>, dof: usize, feature_dim: usize) -> Result<Self, DiffError> {
        if feature_dim < 2 {
            return Err(DiffError::Shape { op: "RmpPolicy::new", detail: "features must start with the goal position" });
        }
        for s in &subtasks {
            let n = s.dim(dof);
            if s.accel_net.input_dim() != s.input_dim(dof, feature_dim)
                || s.cholesky_net.input_dim() != s.input_dim(dof, feature_dim)
                || s.accel_net.output_dim() != n
                || s.cholesky_net.output_dim() != n * (n + 1) / 2
            {
                return Err(DiffError::Shape { op: "RmpPolicy::new", detail: "subtask network dimensions" });
            }
        }
        Ok(Self { subtasks, dof, feature_dim })
    }

    /// End-effector goal subtask plus configuration-space residual.
    pub fn init(dof: usize, feature_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        let net = |inp: usize, out: usize, rng: &mut Rng| {
            let mut sizes = vec![inp];
            sizes.extend_from_slice(hidden);
            sizes.push(out);
            MlpParams::init(&sizes, Activation::Elu, rng)
        };
        let mut subtasks = Vec::new();
        for map in [SubtaskMap::EeGoal, SubtaskMap::CspaceResidual] {
            let (inp, n) = match map {
                SubtaskMap::EeGoal => (4, 2),
                SubtaskMap::CspaceResidual => (2 * dof + feature_dim, dof),
            };
            let accel_net = net(inp, n, rng);
            let cholesky_net = net(inp, n * (n + 1) / 2, rng);
            subtasks.push(Subtask { map, accel_net, cholesky_net, diag_offset: DIAG_OFFSET });
        }
        Self { subtasks, dof, feature_dim }
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn subtask_eval(&self, k: usize, arm: &ArmSpec, state: &State, features: &[f64]) -> Result<SubtaskRmp, PolicyError> {
        rmp_subtask_eval(&self.subtasks[k], arm, state, features)
    }

    pub fn eval_resolved(&self, arm: &ArmSpec, state: &State, features: &[f64]) -> Result<Resolved, PolicyError> {
        let terms = self.subtasks.iter().map(|s| rmp_subtask_eval(s, arm, state, features)).collect::<Result<Vec<_>, _>>()?;
        Ok(rmp_resolve(&terms, self.dof))
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum PolicyError {
    #[error(transparent)]
    Net(#[from] DiffError),
    #[error(transparent)]
    Arm(#[from] ArmError),
    #[error("cholesky network returned {got} entries, expected {expected}")]
    CholeskyLength { expected: usize, got: usize },
    #[error("policy class has no certified Lipschitz constant")]
    NotCertifiable,
}

/// Evaluates one subtask: nets on `(x, ẋ)` (plus features for the residual),
/// `M = L Lᵀ` with the offset on `L`'s diagonal.
pub fn rmp_subtask_eval(sub: &Subtask, arm: &ArmSpec, state: &State, features: &[f64]) -> Result<SubtaskRmp, PolicyError> {
    let d = arm.dof();
    let (input, jac, curv) = match sub.map {
        SubtaskMap::EeGoal => {
            let p = arm.fk_position(&state.q)?;
            let jac = arm.jacobian(&state.q)?;
            let v = jac.matvec(&state.qd);
            let c = arm.jacobian_dot_qd(&state.q, &state.qd)?;
            let goal = features.get(..2).ok_or(ArmError::Dimension { expected: 2, got: features.len() })?;
            (vec![p[0] - goal[0], p[1] - goal[1], v[0], v[1]], jac, c.to_vec())
        }
        SubtaskMap::CspaceResidual => {
            let mut x = state.to_vec();
            x.extend_from_slice(features);
            (x, Matrix::identity(d), vec![0.0; d])
        }
    };
    let n = sub.dim(d);
    let accel = sub.accel_net.forward(&input)?;
    let packed = sub.cholesky_net.forward(&input)?;
    if packed.len() != n * (n + 1) / 2 {
        return Err(PolicyError::CholeskyLength { expected: n * (n + 1) / 2, got: packed.len() });
    }
    let l = lower_from_packed(&packed, n, sub.diag_offset);
    let metric = l.matmul(&l.transpose());
    Ok(SubtaskRmp { accel, metric, jac, curv })
}

/// Either policy class behind one interface.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "class", rename_all = "snake_case")]
pub enum Policy {
    Nn(NnPolicy),
    Rmp(RmpPolicy),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyClass {
    Nn,
    Rmp,
}

impl PolicyClass {
    pub fn name(self) -> &'static str {
        match self {
            PolicyClass::Nn => "nn",
            PolicyClass::Rmp => "rmp",
        }
    }
}

impl Policy {
    pub fn init(class: PolicyClass, dof: usize, feature_dim: usize, hidden: &[usize], rng: &mut Rng) -> Self {
        match class {
            PolicyClass::Nn => Policy::Nn(NnPolicy::init(dof, feature_dim, hidden, rng)),
            PolicyClass::Rmp => Policy::Rmp(RmpPolicy::init(dof, feature_dim, hidden, rng)),
        }
    }

    pub fn class(&self) -> PolicyClass {
        match self {
            Policy::Nn(_) => PolicyClass::Nn,
            Policy::Rmp(_) => PolicyClass::Rmp,
        }
    }

    pub fn dof(&self) -> usize {
        match self {
            Policy::Nn(p) => p.dof,
            Policy::Rmp(p) => p.dof,
        }
    }

    pub fn feature_dim(&self) -> usize {
        match self {
            Policy::Nn(p) => p.feature_dim,
            Policy::Rmp(p) => p.feature_dim,
        }
    }

    pub fn eval(&self, arm: &ArmSpec, state: &State, features: &[f64]) -> Result<Vec<f64>, PolicyError> {
        match self {
            Policy::Nn(p) => Ok(p.eval(state, features)?),
            Policy::Rmp(p) => Ok(p.eval_resolved(arm, state, features)?.accel),
        }
    }

    /// Certified closed-loop constant; only the plain network has one.
    pub fn certified_lipschitz(&self, ts: f64) -> Result<f64, PolicyError> {
        match self {
            Policy::Nn(p) => Ok(p.lipschitz(ts)?),
            Policy::Rmp(_) => Err(PolicyError::NotCertifiable),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn bind(&self, tape: &mut Tape) -> PolicyVars {
        match self {
            Policy::Nn(p) => PolicyVars::Nn(p.net.bind(tape)),
            Policy::Rmp(p) => {
                PolicyVars::Rmp(p.subtasks.iter().map(|s| (s.map, s.diag_offset, s.accel_net.bind(tape), s.cholesky_net.bind(tape))).collect())
            }
        }
    }

    /// Closed-loop controller reading task features from the rollout metadata.
    pub fn controller<'a>(&'a self, arm: &'a ArmSpec) -> PolicyController<'a> {
        PolicyController { policy: self, arm }
    }
}

impl ParamSet for Policy {
    fn tensors(&self) -> Vec<&[f64]> {
        match self {
            Policy::Nn(p) => p.net.tensors(),
            Policy::Rmp(p) => p.subtasks.iter().flat_map(|s| s.accel_net.tensors().into_iter().chain(s.cholesky_net.tensors())).collect(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Policy::Nn(p) => p.net.tensors_mut(),
            Policy::Rmp(p) => p
                .subtasks
                .iter_mut()
                .flat_map(|s| {
                    let Subtask { accel_net, cholesky_net, .. } = s;
                    accel_net.tensors_mut().into_iter().chain(cholesky_net.tensors_mut())
                })
                .collect(),
        }
    }
}

/// Tape handles for a bound policy.
#[derive(Clone, Debug)]
pub enum PolicyVars {
    Nn(MlpVars),
    Rmp(Vec<(SubtaskMap, f64, MlpVars, MlpVars)>),
}

impl PolicyVars {
    /// Batched actions, `B×d`, for rows of `q`, `qd` and `features`.
    pub fn forward(&self, tape: &mut Tape, arm: &ArmSpec, q: Var, qd: Var, features: Var) -> Result<Var, DiffError> {
        match self {
            PolicyVars::Nn(net) => {
                let x = tape.concat_cols(&[q, qd, features])?;
                net.forward(tape, x)
            }
            PolicyVars::Rmp(subs) => {
                let d = arm.dof();
                let rows = tape.shape(q).0;
                let mut terms = Vec::with_capacity(subs.len());
                let mut offset = None;
                for (map, diag, accel_net, chol_net) in subs {
                    offset = Some(*diag);
                    let (input, jac, curv, n) = match map {
                        SubtaskMap::EeGoal => {
                            let kin = arm.tape_kinematics(tape, q, qd)?;
                            let goal = tape.slice_cols(features, 0, 2)?;
                            let x = tape.sub(kin.pos, goal)?;
                            let input = tape.concat_cols(&[x, kin.vel])?;
                            (input, kin.jac, kin.curv, 2)
                        }
                        SubtaskMap::CspaceResidual => {
                            let input = tape.concat_cols(&[q, qd, features])?;
                            let eye = Matrix::identity(d).into_vec();
                            let jac = tape.constant(rows, d * d, eye.repeat(rows));
                            let curv = tape.constant(rows, d, vec![0.0; rows * d]);
                            (input, jac, curv, d)
                        }
                    };
                    let accel = accel_net.forward(tape, input)?;
                    let chol = chol_net.forward(tape, input)?;
                    terms.push(FuseTerm { accel, chol, jac, curv, dim: n });
                }
                // every subtask shares the same offset in practice
                tape.rmp_fuse(&terms, d, offset.unwrap_or(DIAG_OFFSET), PINV_CUTOFF)
            }
        }
    }

    pub fn gradient(&self, grads: &Gradients, shape: &Policy) -> Policy {
        match (self, shape) {
            (PolicyVars::Nn(v), Policy::Nn(p)) => Policy::Nn(NnPolicy { net: v.gradient(grads, &p.net), ..p.clone() }),
            (PolicyVars::Rmp(vs), Policy::Rmp(p)) => {
                let subtasks = vs
                    .iter()
                    .zip(&p.subtasks)
                    .map(|((_, _, a, c), s)| Subtask {
                        accel_net: a.gradient(grads, &s.accel_net),
                        cholesky_net: c.gradient(grads, &s.cholesky_net),
                        ..s.clone()
                    })
                    .collect();
                Policy::Rmp(RmpPolicy { subtasks, ..p.clone() })
            }
            _ => panic!("policy vars bound to a different class"),
        }
    }
}

pub struct PolicyController<'a> {
    policy: &'a Policy,
    arm: &'a ArmSpec,
}

impl Controller for PolicyController<'_> {
    fn act(&mut self, t: usize, state: &State, meta: &TaskMeta) -> Result<Vec<f64>, ArmError> {
        self.policy.eval(self.arm, state, &meta.policy_features()).map_err(|_| ArmError::Controller { step: t, reason: "policy evaluation failed" })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mlp::Layer;
    use crate::rng::seeded;

    fn affine(w: Matrix, b: Vec<f64>) -> MlpParams {
        MlpParams::new(vec![Layer { weight: w, bias: b }], Activation::Identity).unwrap()
    }

    fn ident_term(dim: usize, m: f64, a: Vec<f64>) -> SubtaskRmp {
        SubtaskRmp { accel: a, metric: Matrix::scaled_identity(dim, m), jac: Matrix::identity(dim), curv: vec![0.0; dim] }
    }

    #[test]
    fn nn_zero_net_and_q_block() {
        let mut p = NnPolicy::init(2, 2, &[8], &mut seeded(1));
        for t in p.net.tensors_mut() {
            t.fill(0.0);
        }
        let s = State::new(vec![0.3, -0.1], vec![1.0, 2.0]);
        assert_eq!(p.eval(&s, &[1.0, 0.5]).unwrap(), vec![0.0, 0.0]);

        let mut w = Matrix::zeros(2, 6);
        w[(0, 0)] = 1.0;
        w[(1, 1)] = 1.0;
        let q_block = NnPolicy::new(affine(w, vec![0.0; 2]), 2, 2).unwrap();
        assert_eq!(q_block.eval(&s, &[1.0, 0.5]).unwrap(), vec![0.3, -0.1]);
    }

    #[test]
    fn nn_features_matter() {
        let p = NnPolicy::init(2, 2, &[16, 8], &mut seeded(3));
        let s = State::new(vec![0.3, -0.1], vec![0.2, 0.4]);
        assert_ne!(p.eval(&s, &[1.0, 0.5]).unwrap(), p.eval(&s, &[1.2, 0.5]).unwrap());
    }

    #[test]
    fn resolve_examples() {
        let r = rmp_resolve(&[ident_term(2, 1.0, vec![1.0, 2.0])], 2);
        assert!((r.accel[0] - 1.0).abs() < 1e-14 && (r.accel[1] - 2.0).abs() < 1e-14);
        let (a1, a2) = (vec![1.0, -2.0], vec![3.0, 4.0]);
        let avg = rmp_resolve(&[ident_term(2, 1.0, a1.clone()), ident_term(2, 1.0, a2.clone())], 2);
        let w = rmp_resolve(&[ident_term(2, 2.0, a1.clone()), ident_term(2, 1.0, a2.clone())], 2);
        for i in 0..2 {
            assert!((avg.accel[i] - (a1[i] + a2[i]) / 2.0).abs() < 1e-14);
            assert!((w.accel[i] - (2.0 * a1[i] + a2[i]) / 3.0).abs() < 1e-14);
        }
        let zero = rmp_resolve(&[ident_term(2, 0.0, vec![1.0, 1.0])], 2);
        assert!(zero.degenerate());
        assert_eq!(zero.accel, vec![0.0, 0.0]);
    }

    #[test]
    fn subtask_eval_examples() {
        let arm = ArmSpec::default();
        let mut pol = RmpPolicy::init(2, 2, &[8], &mut seeded(5));
        let s = State::new(vec![0.4, 0.9], vec![0.1, -0.3]);
        let goal = arm.fk_position(&s.q).unwrap();
        let feats = [goal[0], goal[1]];
        let res = pol.subtask_eval(1, &arm, &s, &feats).unwrap();
        assert_eq!(res.jac, Matrix::identity(2));
        assert_eq!(res.curv, vec![0.0, 0.0]);

        for t in pol.subtasks[0].cholesky_net.tensors_mut() {
            t.fill(0.0);
        }
        let ee = pol.subtask_eval(0, &arm, &s, &feats).unwrap();
        let expect = Matrix::scaled_identity(2, 1e-10);
        assert!(ee.metric.as_slice().iter().zip(expect.as_slice()).all(|(a, b)| (a - b).abs() < 1e-24));
        // at the goal the subtask coordinate is zero, so the net sees (0, 0, ẋ)
        let v = arm.ee_velocity(&s.q, &s.qd).unwrap();
        let direct = pol.subtasks[0].accel_net.forward(&[0.0, 0.0, v[0], v[1]]).unwrap();
        assert_eq!(ee.accel, direct);
    }

    #[test]
    fn tape_matches_scalar_for_both_classes() {
        let arm = ArmSpec::default();
        let states = [State::new(vec![0.4, 0.9], vec![0.1, -0.3]), State::new(vec![-0.2, 1.4], vec![0.5, 0.2])];
        let feats = [[1.1, 0.6], [0.9, 0.8]];
        for class in [PolicyClass::Nn, PolicyClass::Rmp] {
            let pol = Policy::init(class, 2, 2, &[8, 6], &mut seeded(9));
            let mut tape = Tape::new();
            let vars = pol.bind(&mut tape);
            let q = tape.constant(2, 2, states.iter().flat_map(|s| s.q.clone()).collect());
            let qd = tape.constant(2, 2, states.iter().flat_map(|s| s.qd.clone()).collect());
            let f = tape.constant(2, 2, feats.concat());
            let out = vars.forward(&mut tape, &arm, q, qd, f).unwrap();
            for r in 0..2 {
                let a = pol.eval(&arm, &states[r], &feats[r]).unwrap();
                let row = &tape.value(out)[2 * r..2 * r + 2];
                assert!(a.iter().zip(row).all(|(x, y)| (x - y).abs() < 1e-10), "{class:?}: {a:?} vs {row:?}");
            }
        }
    }

    #[test]
    fn lipschitz_formula() {
        // √(2·(1 + 1e-4))
        assert!((closed_loop_lipschitz(0.0, 0.01) - 1.414284).abs() < 1e-6);
        assert!((closed_loop_lipschitz(1.0, 1.0) - 2.449490).abs() < 1e-6);
        assert!(closed_loop_lipschitz(0.0, 0.0) > 1.0);
        let rmp = Policy::init(PolicyClass::Rmp, 2, 2, &[4], &mut seeded(0));
        assert_eq!(rmp.certified_lipschitz(0.01).unwrap_err(), PolicyError::NotCertifiable);
    }
}
