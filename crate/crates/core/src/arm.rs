//! Planar n-link arm and the discrete acceleration-driven dynamics
//! `q⁺ = q + q̇·ts`, `q̇⁺ = q̇ + a·ts`.
//!
//! Link `k` points at the absolute angle `θ_k = Σ_{j≤k} q_j`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{DiffError, Tape, Var};
use crate::linalg::Matrix;
use crate::math;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ArmError {
    #[error("expected {expected} joint values, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("link lengths must be positive and finite")]
    BadLinks,
    #[error("sample time must be positive, got {0}")]
    BadSampleTime(f64),
    #[error("action is not finite")]
    NonFiniteAction,
    #[error("controller produced a non-finite action at step {step}")]
    ControllerNonFinite { step: usize },
    #[error("controller failed at step {step}: {reason}")]
    Controller { step: usize, reason: &'static str },
    #[error("rollout needs at least one step")]
    EmptyHorizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSpec {
    link_lengths: Vec<f64>,
}

impl Default for ArmSpec {
    fn default() -> Self {
        Self { link_lengths: vec![1.0, 0.8] }
    }
}

impl ArmSpec {
    pub fn new(link_lengths: Vec<f64>) -> Result<Self, ArmError> {
        if link_lengths.is_empty() || link_lengths.iter().any(|l| !(l.is_finite() && *l > 0.0)) {
            return Err(ArmError::BadLinks);
        }
        Ok(Self { link_lengths })
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }

    fn check(&self, q: &[f64]) -> Result<(), ArmError> {
        if q.len() != self.dof() {
            return Err(ArmError::Dimension { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    fn angles(q: &[f64]) -> Vec<f64> {
        let mut acc = 0.0;
        q.iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect()
    }

    /// End-effector pose `(x, y, ϑ)`.
    pub fn fk(&self, q: &[f64]) -> Result<[f64; 3], ArmError> {
        self.check(q)?;
        let th = Self::angles(q);
        let mut out = [0.0, 0.0, *th.last().unwrap_or(&0.0)];
        for (l, t) in self.link_lengths.iter().zip(&th) {
            out[0] += l * math::cos(*t);
            out[1] += l * math::sin(*t);
        }
        Ok(out)
    }

    pub fn fk_position(&self, q: &[f64]) -> Result<[f64; 2], ArmError> {
        let p = self.fk(q)?;
        Ok([p[0], p[1]])
    }

    /// Position Jacobian, `2×d`.
    pub fn jacobian(&self, q: &[f64]) -> Result<Matrix, ArmError> {
        self.check(q)?;
        let th = Self::angles(q);
        let d = self.dof();
        let mut j = Matrix::zeros(2, d);
        // column j collects links k ≥ j
        let (mut sx, mut sy) = (0.0, 0.0);
        for k in (0..d).rev() {
            sx += self.link_lengths[k] * math::sin(th[k]);
            sy += self.link_lengths[k] * math::cos(th[k]);
            j[(0, k)] = -sx;
            j[(1, k)] = sy;
        }
        Ok(j)
    }

    /// `J̇ q̇`, the end-effector acceleration at zero joint acceleration.
    pub fn jacobian_dot_qd(&self, q: &[f64], qd: &[f64]) -> Result<[f64; 2], ArmError> {
        self.check(q)?;
        self.check(qd)?;
        let th = Self::angles(q);
        let thd = Self::angles(qd);
        let mut out = [0.0; 2];
        for k in 0..self.dof() {
            let w2 = thd[k] * thd[k] * self.link_lengths[k];
            out[0] -= w2 * math::cos(th[k]);
            out[1] -= w2 * math::sin(th[k]);
        }
        Ok(out)
    }

    /// End-effector velocity `J q̇`.
    pub fn ee_velocity(&self, q: &[f64], qd: &[f64]) -> Result<[f64; 2], ArmError> {
        self.check(qd)?;
        let v = self.jacobian(q)?.matvec(qd);
        Ok([v[0], v[1]])
    }

    /// Batched kinematics on a tape: rows of `q` and `qd` are configurations.
    pub fn tape_kinematics(&self, tape: &mut Tape, q: Var, qd: Var) -> Result<TapeKinematics, DiffError> {
        let d = self.dof();
        if tape.shape(q).1 != d || tape.shape(qd) != tape.shape(q) {
            return Err(DiffError::Shape { op: "tape_kinematics", detail: "state columns must equal dof" });
        }
        let mut u = Matrix::zeros(d, d);
        let mut lut = Matrix::zeros(d, d);
        for j in 0..d {
            for k in j..d {
                u[(j, k)] = 1.0;
                // (diag(l) Uᵀ)[k][j] = l_k when j ≤ k
                lut[(k, j)] = self.link_lengths[k];
            }
        }
        let l = Matrix::from_vec(d, 1, self.link_lengths.clone());
        let u = tape.constant_matrix(&u);
        let lut = tape.constant_matrix(&lut);
        let l = tape.constant_matrix(&l);

        let th = tape.matmul(q, u)?;
        let thd = tape.matmul(qd, u)?;
        let c = tape.cos(th);
        let s = tape.sin(th);
        let x = tape.matmul(c, l)?;
        let y = tape.matmul(s, l)?;
        let pos = tape.concat_cols(&[x, y])?;

        let s_thd = tape.mul(s, thd)?;
        let c_thd = tape.mul(c, thd)?;
        let xd = tape.matmul(s_thd, l)?;
        let xd = tape.scale(xd, -1.0);
        let yd = tape.matmul(c_thd, l)?;
        let vel = tape.concat_cols(&[xd, yd])?;

        let jx = tape.matmul(s, lut)?;
        let jx = tape.scale(jx, -1.0);
        let jy = tape.matmul(c, lut)?;
        let jac = tape.concat_cols(&[jx, jy])?;

        let thd2 = tape.square(thd);
        let c_w = tape.mul(c, thd2)?;
        let s_w = tape.mul(s, thd2)?;
        let cx = tape.matmul(c_w, l)?;
        let cx = tape.scale(cx, -1.0);
        let cy = tape.matmul(s_w, l)?;
        let cy = tape.scale(cy, -1.0);
        let curv = tape.concat_cols(&[cx, cy])?;
        Ok(TapeKinematics { pos, vel, jac, curv })
    }
}

/// Tape handles produced by [`ArmSpec::tape_kinematics`].
#[derive(Clone, Copy, Debug)]
pub struct TapeKinematics {
    /// `B×2` end-effector positions.
    pub pos: Var,
    /// `B×2` end-effector velocities.
    pub vel: Var,
    /// `B×2d` row-major position Jacobians.
    pub jac: Var,
    /// `B×2` curvature terms `J̇q̇`.
    pub curv: Var,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub q: Vec<f64>,
    pub qd: Vec<f64>,
}

impl State {
    pub fn new(q: Vec<f64>, qd: Vec<f64>) -> Self {
        Self { q, qd }
    }

    pub fn rest(q: Vec<f64>) -> Self {
        let qd = vec![0.0; q.len()];
        Self { q, qd }
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    /// `[q, q̇]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.q.clone();
        v.extend_from_slice(&self.qd);
        v
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).all(|x| x.is_finite())
    }

    /// Full-state Euclidean distance over `(q, q̇)`.
    pub fn distance(&self, other: &State) -> f64 {
        let sq: f64 = self.q.iter().zip(&other.q).chain(self.qd.iter().zip(&other.qd)).map(|(a, b)| (a - b) * (a - b)).sum();
        math::sqrt(sq)
    }
}

/// One step of the acceleration-driven dynamics.
pub fn step(state: &State, action: &[f64], ts: f64) -> Result<State, ArmError> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(ArmError::BadSampleTime(ts));
    }
    if action.len() != state.dof() || state.qd.len() != state.dof() {
        return Err(ArmError::Dimension { expected: state.dof(), got: action.len() });
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(ArmError::NonFiniteAction);
    }
    let q = state.q.iter().zip(&state.qd).map(|(q, v)| q + v * ts).collect();
    let qd = state.qd.iter().zip(action).map(|(v, a)| v + a * ts).collect();
    Ok(State { q, qd })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMeta {
    pub start_ee: [f64; 3],
    pub goal_ee: [f64; 3],
    /// Extra task descriptors such as an obstacle; empty by default.
    pub features: Vec<f64>,
}

impl TaskMeta {
    /// Task inputs seen by policies: goal position followed by `features`.
    pub fn policy_features(&self) -> Vec<f64> {
        let mut v = vec![self.goal_ee[0], self.goal_ee[1]];
        v.extend_from_slice(&self.features);
        v
    }

    pub fn goal_position(&self) -> [f64; 2] {
        [self.goal_ee[0], self.goal_ee[1]]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u64,
    pub ts: f64,
    pub states: Vec<State>,
    pub actions: Option<Vec<Vec<f64>>>,
    pub meta: TaskMeta,
    /// Set when the trajectory was produced by stepping the dynamics.
    pub expert: bool,
}

impl Trajectory {
    /// Number of steps `T`.
    pub fn horizon(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn dof(&self) -> usize {
        self.states.first().map_or(0, State::dof)
    }

    /// Largest per-entry violation of the dynamics by the recorded actions,
    /// or `None` when actions are absent.
    pub fn dynamics_residual(&self) -> Option<f64> {
        let actions = self.actions.as_ref()?;
        let mut worst = 0.0_f64;
        for (t, a) in actions.iter().enumerate() {
            let (s, n) = (&self.states[t], &self.states[t + 1]);
            for k in 0..s.dof() {
                worst = worst.max((s.q[k] + s.qd[k] * self.ts - n.q[k]).abs());
                worst = worst.max((s.qd[k] + a[k] * self.ts - n.qd[k]).abs());
            }
        }
        Some(worst)
    }

    /// Checks structural invariants; expert trajectories must also satisfy
    /// the dynamics to `tol`.
    pub fn validate(&self, tol: f64) -> Result<(), &'static str> {
        if self.states.len() < 2 {
            return Err("trajectory needs at least two states");
        }
        if !(self.ts > 0.0 && self.ts.is_finite()) {
            return Err("sample time must be positive");
        }
        let d = self.dof();
        if self.states.iter().any(|s| s.q.len() != d || s.qd.len() != d || !s.is_finite()) {
            return Err("states must be finite and share a dimension");
        }
        if let Some(a) = &self.actions {
            if a.len() + 1 != self.states.len() {
                return Err("actions must number states - 1");
            }
            if a.iter().any(|x| x.len() != d || x.iter().any(|v| !v.is_finite())) {
                return Err("actions must be finite with dimension d");
            }
        }
        if self.expert {
            match self.dynamics_residual() {
                None => return Err("expert trajectory without actions"),
                Some(r) if !(r <= tol) => return Err("expert trajectory violates the dynamics"),
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config_digest: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ts: f64,
    pub arm: ArmSpec,
    pub trajectories: Vec<Trajectory>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// `Σ T_i`
    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(Trajectory::horizon).sum()
    }

    /// Subset in the given order.
    pub fn select(&self, index: &[usize]) -> Dataset {
        Dataset {
            ts: self.ts,
            arm: self.arm.clone(),
            trajectories: index.iter().map(|&i| self.trajectories[i].clone()).collect(),
            provenance: self.provenance,
        }
    }

    /// Order-sensitive content digest.
    pub fn digest(&self) -> u64 {
        let mut h = crate::rng::Fnv64::default();
        h.write_f64(self.ts);
        for l in self.arm.link_lengths() {
            h.write_f64(*l);
        }
        for tr in &self.trajectories {
            h.write_u64(tr.id);
            for s in &tr.states {
                s.q.iter().chain(&s.qd).for_each(|x| h.write_f64(*x));
            }
            for a in tr.actions.iter().flatten() {
                a.iter().for_each(|x| h.write_f64(*x));
            }
            tr.meta.start_ee.iter().chain(&tr.meta.goal_ee).chain(&tr.meta.features).for_each(|x| h.write_f64(*x));
        }
        h.finish()
    }
}

/// Anything that maps a state to an acceleration during a rollout.
pub trait Controller {
    /// `t` is the step index, starting at zero.
    fn act(&mut self, t: usize, state: &State, meta: &TaskMeta) -> Result<Vec<f64>, ArmError>;
}

impl<F> Controller for F
where
    F: FnMut(usize, &State, &TaskMeta) -> Vec<f64>,
{
    fn act(&mut self, t: usize, state: &State, meta: &TaskMeta) -> Result<Vec<f64>, ArmError> {
        Ok(self(t, state, meta))
    }
}

/// Replays recorded actions open loop.
pub struct Replay<'a>(pub &'a [Vec<f64>]);

impl Controller for Replay<'_> {
    fn act(&mut self, t: usize, _: &State, _: &TaskMeta) -> Result<Vec<f64>, ArmError> {
        self.0.get(t).cloned().ok_or(ArmError::Controller { step: t, reason: "replay ran out of actions" })
    }
}

/// Closed-loop rollout for `horizon` steps from `s0`.
pub fn rollout<C: Controller + ?Sized>(ctrl: &mut C, s0: State, meta: &TaskMeta, horizon: usize, ts: f64) -> Result<Trajectory, ArmError> {
    if horizon == 0 {
        return Err(ArmError::EmptyHorizon);
    }
    let mut states = Vec::with_capacity(horizon + 1);
    let mut actions = Vec::with_capacity(horizon);
    states.push(s0);
    for t in 0..horizon {
        let s = &states[t];
        let a = ctrl.act(t, s, meta)?;
        if a.iter().any(|x| !x.is_finite()) {
            return Err(ArmError::ControllerNonFinite { step: t });
        }
        let next = step(s, &a, ts).map_err(|e| match e {
            ArmError::NonFiniteAction => ArmError::ControllerNonFinite { step: t },
            other => other,
        })?;
        if !next.is_finite() {
            return Err(ArmError::ControllerNonFinite { step: t });
        }
        states.push(next);
        actions.push(a);
    }
    Ok(Trajectory { id: 0, ts, states, actions: Some(actions), meta: meta.clone(), expert: false })
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::f64::consts::FRAC_PI_2;

    fn unit2() -> ArmSpec {
        ArmSpec::new(vec![1.0, 1.0]).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn fk_examples() {
        let arm = unit2();
        assert!(close(&arm.fk(&[0.0, 0.0]).unwrap(), &[2.0, 0.0, 0.0], 1e-15));
        assert!(close(&arm.fk(&[FRAC_PI_2, 0.0]).unwrap(), &[0.0, 2.0, FRAC_PI_2], 1e-15));
        assert!(close(&arm.fk(&[FRAC_PI_2, -FRAC_PI_2]).unwrap(), &[1.0, 1.0, 0.0], 1e-15));
        assert_eq!(arm.fk(&[0.0]).unwrap_err(), ArmError::Dimension { expected: 2, got: 1 });
    }

    #[test]
    fn jacobian_examples() {
        let arm = unit2();
        assert!(close(arm.jacobian(&[0.0, 0.0]).unwrap().as_slice(), &[0.0, 0.0, 2.0, 1.0], 1e-15));
        assert!(close(arm.jacobian(&[FRAC_PI_2, 0.0]).unwrap().as_slice(), &[-2.0, -1.0, 0.0, 0.0], 1e-15));
    }

    #[test]
    fn curvature_examples() {
        let one = ArmSpec::new(vec![1.0]).unwrap();
        assert!(close(&one.jacobian_dot_qd(&[0.0], &[1.0]).unwrap(), &[-1.0, 0.0], 1e-15));
        assert_eq!(unit2().jacobian_dot_qd(&[0.3, 0.2], &[0.0, 0.0]).unwrap(), [0.0, 0.0]);
    }

    #[test]
    fn step_examples() {
        let s = State::new(vec![1.0], vec![2.0]);
        let n = step(&s, &[3.0], 0.1).unwrap();
        assert!((n.q[0] - 1.2).abs() < 1e-15 && (n.qd[0] - 2.3).abs() < 1e-15);
        let z = State::rest(vec![0.0]);
        assert_eq!(step(&z, &[0.0], 0.1).unwrap(), z);
        assert_eq!(step(&z, &[f64::NAN], 0.1).unwrap_err(), ArmError::NonFiniteAction);
        assert_eq!(step(&z, &[0.0], 0.0).unwrap_err(), ArmError::BadSampleTime(0.0));
    }

    #[test]
    fn constant_action_closed_form() {
        let meta = TaskMeta { start_ee: [0.0; 3], goal_ee: [0.0; 3], features: vec![] };
        let mut c = |_: usize, _: &State, _: &TaskMeta| vec![1.0];
        let tr = rollout(&mut c, State::rest(vec![0.0]), &meta, 6, 1.0).unwrap();
        for (t, s) in tr.states.iter().enumerate() {
            let t = t as f64;
            assert_eq!(s.qd[0], t);
            assert_eq!(s.q[0], t * (t - 1.0) / 2.0);
        }
        let mut zero = |_: usize, _: &State, _: &TaskMeta| vec![0.0];
        let tr = rollout(&mut zero, State::rest(vec![0.4]), &meta, 3, 0.1).unwrap();
        assert!(tr.states.iter().all(|s| s.q == [0.4] && s.qd == [0.0]));
    }

    #[test]
    fn rollout_reports_failing_step() {
        let meta = TaskMeta { start_ee: [0.0; 3], goal_ee: [0.0; 3], features: vec![] };
        let mut c = |t: usize, _: &State, _: &TaskMeta| vec![if t == 2 { f64::INFINITY } else { 0.0 }];
        let err = rollout(&mut c, State::rest(vec![0.0]), &meta, 5, 0.1).unwrap_err();
        assert_eq!(err, ArmError::ControllerNonFinite { step: 2 });
    }

    #[test]
    fn tape_kinematics_match_scalar() {
        let arm = ArmSpec::new(vec![1.0, 0.8, 0.5]).unwrap();
        let qs = [[0.1, -0.4, 0.9], [1.3, 0.2, -0.7]];
        let qds = [[0.5, 1.1, -0.3], [-0.2, 0.0, 0.8]];
        let mut tape = Tape::new();
        let q = tape.constant(2, 3, qs.concat());
        let qd = tape.constant(2, 3, qds.concat());
        let k = arm.tape_kinematics(&mut tape, q, qd).unwrap();
        for r in 0..2 {
            let p = arm.fk_position(&qs[r]).unwrap();
            let v = arm.ee_velocity(&qs[r], &qds[r]).unwrap();
            let j = arm.jacobian(&qs[r]).unwrap();
            let c = arm.jacobian_dot_qd(&qs[r], &qds[r]).unwrap();
            assert!(close(&tape.value(k.pos)[2 * r..2 * r + 2], &p, 1e-14));
            assert!(close(&tape.value(k.vel)[2 * r..2 * r + 2], &v, 1e-14));
            assert!(close(&tape.value(k.jac)[6 * r..6 * r + 6], j.as_slice(), 1e-14));
            assert!(close(&tape.value(k.curv)[2 * r..2 * r + 2], &c, 1e-14));
        }
    }
}
