//! Auxiliary trajectories anchored at a demonstration's boundary states.
//!
//! Per joint, with duration `D = T·ts`:
//!
//! ```text
//! ρ(τ) = h00 q₀ + h01 q_T + h10 q̇₀ + h11 q̇_T + τ²(D−τ)² ψ(τ)
//! ```
//!
//! where the `h` are the cubic Hermite blends, so `ρ` and `dρ/dτ` match the
//! demonstration at `τ = 0` and `τ = D` whatever `ψ` is. Velocities are
//! central differences of `ρ` with step `Δ`; actions are forward differences
//! of those velocities, which makes the velocity row of the dynamics exact.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::arm::{ArmError, ArmSpec, State, Trajectory};
use crate::diff::{DiffError, Gradients, Tape, Var};
use crate::linalg::Matrix;
use crate::mlp::{Activation, MlpParams, MlpVars, ParamSet};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxMode {
    /// One network per joint, shared across demonstrations.
    Joint,
    /// One small network per demonstration and joint.
    Independent,
}

/// Boundary data read from a demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct Anchors {
    pub q0: Vec<f64>,
    pub qd0: Vec<f64>,
    pub qt: Vec<f64>,
    pub qdt: Vec<f64>,
    pub duration: f64,
}

/// What the auxiliary network needs to know about one demonstration.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxDemo {
    pub anchors: Anchors,
    /// `[fk(q₀) as (x, y, ϑ), task features]`, used in joint mode.
    pub context: Vec<f64>,
    pub horizon: usize,
}

impl AuxDemo {
    pub fn from_trajectory(arm: &ArmSpec, tr: &Trajectory) -> Result<Self, ArmError> {
        let (first, last) = match (tr.states.first(), tr.states.last()) {
            (Some(f), Some(l)) if tr.states.len() >= 2 => (f, l),
            _ => return Err(ArmError::EmptyHorizon),
        };
        let mut context = arm.fk(&first.q)?.to_vec();
        context.extend(tr.meta.policy_features());
        Ok(Self {
            anchors: Anchors {
                q0: first.q.clone(),
                qd0: first.qd.clone(),
                qt: last.q.clone(),
                qdt: last.qd.clone(),
                duration: tr.horizon() as f64 * tr.ts,
            },
            context,
            horizon: tr.horizon(),
        })
    }
}

/// Hermite part of `ρ` for every joint, and the envelope `τ²(D−τ)²`.
pub fn hermite(a: &Anchors, tau: f64) -> (Vec<f64>, f64) {
    let d = a.duration;
    let r = d - tau;
    let cubic = tau * r * (d - 2.0 * tau) / (d * d * d);
    let h00 = r / d + cubic;
    let h01 = tau / d - cubic;
    let h10 = tau * r * r / (d * d);
    let h11 = -tau * tau * r / (d * d);
    let blend = (0..a.q0.len()).map(|k| h00 * a.q0[k] + h01 * a.qt[k] + h10 * a.qd0[k] + h11 * a.qdt[k]).collect();
    (blend, tau * tau * r * r)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuxTrajParams {
    pub mode: AuxMode,
    /// Joint: `d` nets. Independent: `N·d` nets, demo-major.
    pub nets: Vec<MlpParams>,
    dof: usize,
    /// Central-difference step in seconds.
    pub delta: f64,
}

impl AuxTrajParams {
    /// Networks with tanh hidden layers. With `zero_output` the last layer
    /// starts at zero so the trajectory starts as the Hermite blend.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        mode: AuxMode,
        dof: usize,
        n_demos: usize,
        context_dim: usize,
        hidden: &[usize],
        delta: f64,
        zero_output: bool,
        rng: &mut Rng,
    ) -> Self {
        let (count, inp) = match mode {
            AuxMode::Joint => (dof, 1 + context_dim),
            AuxMode::Independent => (n_demos * dof, 1),
        };
        let mut sizes = vec![inp];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let nets = (0..count)
            .map(|_| {
                let mut n = MlpParams::init(&sizes, Activation::Tanh, rng);
                if zero_output {
                    n.zero_output_layer();
                }
                n
            })
            .collect();
        Self { mode, nets, dof, delta }
    }

    pub fn new(mode: AuxMode, nets: Vec<MlpParams>, dof: usize, delta: f64) -> Result<Self, DiffError> {
        if !(delta > 0.0) || dof == 0 || nets.is_empty() || !nets.len().is_multiple_of(dof) {
            return Err(DiffError::Shape { op: "AuxTrajParams::new", detail: "need Δ > 0 and a multiple of d networks" });
        }
        if mode == AuxMode::Joint && nets.len() != dof {
            return Err(DiffError::Shape { op: "AuxTrajParams::new", detail: "joint mode has exactly d networks" });
        }
        if nets.iter().any(|n| n.output_dim() != 1) {
            return Err(DiffError::Shape { op: "AuxTrajParams::new", detail: "ψ networks are scalar" });
        }
        Ok(Self { mode, nets, dof, delta })
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Number of demonstrations covered in independent mode.
    pub fn demo_count(&self) -> Option<usize> {
        match self.mode {
            AuxMode::Joint => None,
            AuxMode::Independent => Some(self.nets.len() / self.dof),
        }
    }

    fn net_index(&self, demo: usize, joint: usize) -> usize {
        match self.mode {
            AuxMode::Joint => joint,
            AuxMode::Independent => demo * self.dof + joint,
        }
    }

    fn net_input(&self, demo: &AuxDemo, tau: f64) -> Vec<f64> {
        let mut x = vec![tau / demo.anchors.duration];
        if self.mode == AuxMode::Joint {
            x.extend_from_slice(&demo.context);
        }
        x
    }

    /// `ψ` at several times for demo `i`, one row per time.
    fn psi_rows(&self, demo: &AuxDemo, i: usize, taus: &[f64]) -> Result<Matrix, DiffError> {
        let width = self.net_input(demo, 0.0).len();
        let mut input = Matrix::zeros(taus.len(), width);
        for (r, &tau) in taus.iter().enumerate() {
            input.row_mut(r).copy_from_slice(&self.net_input(demo, tau));
        }
        let mut out = Matrix::zeros(taus.len(), self.dof);
        for k in 0..self.dof {
            let col = self.nets[self.net_index(i, k)].forward_batch(&input)?;
            for r in 0..taus.len() {
                out[(r, k)] = col[(r, 0)];
            }
        }
        Ok(out)
    }

    /// `ρ(τ)` for demonstration `i`.
    pub fn position(&self, demo: &AuxDemo, i: usize, tau: f64) -> Result<Vec<f64>, DiffError> {
        Ok(self.positions(demo, i, &[tau])?.remove(0))
    }

    pub fn positions(&self, demo: &AuxDemo, i: usize, taus: &[f64]) -> Result<Vec<Vec<f64>>, DiffError> {
        let psi = self.psi_rows(demo, i, taus)?;
        Ok(taus
            .iter()
            .enumerate()
            .map(|(r, &tau)| {
                let (mut q, env) = hermite(&demo.anchors, tau);
                q.iter_mut().zip(psi.row(r)).for_each(|(q, p)| *q += env * p);
                q
            })
            .collect())
    }

    pub fn sample_state(&self, demo: &AuxDemo, i: usize, t: usize, ts: f64) -> Result<State, DiffError> {
        let tau = t as f64 * ts;
        let p = self.positions(demo, i, &[tau, tau + self.delta, tau - self.delta])?;
        let qd = p[1].iter().zip(&p[2]).map(|(a, b)| (a - b) / (2.0 * self.delta)).collect();
        Ok(State { q: p[0].clone(), qd })
    }

    pub fn sample_action(&self, demo: &AuxDemo, i: usize, t: usize, ts: f64) -> Result<Vec<f64>, DiffError> {
        let a = self.sample_state(demo, i, t, ts)?;
        let b = self.sample_state(demo, i, t + 1, ts)?;
        Ok(b.qd.iter().zip(&a.qd).map(|(n, c)| (n - c) / ts).collect())
    }

    /// All `T+1` states and `T` actions of auxiliary trajectory `i`.
    pub fn sample_trajectory(&self, demo: &AuxDemo, i: usize, ts: f64) -> Result<(Vec<State>, Vec<Vec<f64>>), DiffError> {
        let n = demo.horizon + 1;
        let mut taus = Vec::with_capacity(3 * n);
        for t in 0..n {
            let tau = t as f64 * ts;
            taus.extend_from_slice(&[tau, tau + self.delta, tau - self.delta]);
        }
        let p = self.positions(demo, i, &taus)?;
        let states: Vec<State> = (0..n)
            .map(|t| {
                let qd = p[3 * t + 1].iter().zip(&p[3 * t + 2]).map(|(a, b)| (a - b) / (2.0 * self.delta)).collect();
                State { q: p[3 * t].clone(), qd }
            })
            .collect();
        let actions = states.windows(2).map(|w| w[1].qd.iter().zip(&w[0].qd).map(|(a, b)| (a - b) / ts).collect()).collect();
        Ok((states, actions))
    }

    /// Largest `|q̃_{t+1} − q̃_t − q̇̃_t·ts|`: how far the samples are from
    /// satisfying the position row of the dynamics. Reported, never trained on.
    pub fn position_residual(&self, demo: &AuxDemo, i: usize, ts: f64) -> Result<f64, DiffError> {
        let (states, _) = self.sample_trajectory(demo, i, ts)?;
        let mut worst = 0.0_f64;
        for w in states.windows(2) {
            for k in 0..self.dof {
                worst = worst.max((w[1].q[k] - w[0].q[k] - w[0].qd[k] * ts).abs());
            }
        }
        Ok(worst)
    }

    pub fn is_finite(&self) -> bool {
        self.nets.iter().all(MlpParams::is_finite)
    }

    pub fn bind(&self, tape: &mut Tape) -> AuxVars {
        AuxVars { nets: self.nets.iter().map(|n| n.bind(tape)).collect() }
    }
}

impl ParamSet for AuxTrajParams {
    fn tensors(&self) -> Vec<&[f64]> {
        self.nets.tensors()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.nets.tensors_mut()
    }
}

/// Batched auxiliary samples on a tape, each `B×d`.
#[derive(Clone, Copy, Debug)]
pub struct AuxBatch {
    pub q: Var,
    pub qd: Var,
    /// Forward-difference action at each sample's step.
    pub action: Var,
}

#[derive(Clone, Debug)]
pub struct AuxVars {
    nets: Vec<MlpVars>,
}

/// Five sample times per `(i, t)`: `t·ts`, `t·ts ± Δ`, `(t+1)·ts ± Δ`.
const POINTS: usize = 5;

impl AuxVars {
    /// States `(q̃_t, q̇̃_t)` and actions `ã_t` for each `(demo, step)` pair.
    pub fn sample_batch(
        &self,
        tape: &mut Tape,
        params: &AuxTrajParams,
        demos: &[AuxDemo],
        samples: &[(usize, usize)],
        ts: f64,
    ) -> Result<AuxBatch, DiffError> {
        let d = params.dof;
        let b = samples.len();
        let delta = params.delta;
        let offsets = [0.0, delta, -delta, ts + delta, ts - delta];
        // rows are point-major: block p holds point p of every sample
        let n = POINTS * b;
        let mut blend = vec![0.0; n * d];
        let mut env = vec![0.0; n * d];
        let mut taus = vec![0.0; n];
        for p in 0..POINTS {
            for (s, &(i, t)) in samples.iter().enumerate() {
                let tau = t as f64 * ts + offsets[p];
                let r = p * b + s;
                let (h, e) = hermite(&demos[i].anchors, tau);
                blend[r * d..(r + 1) * d].copy_from_slice(&h);
                env[r * d..(r + 1) * d].fill(e);
                taus[r] = tau;
            }
        }
        let psi = match params.mode {
            AuxMode::Joint => {
                let width = 1 + demos[0].context.len();
                let mut x = vec![0.0; n * width];
                for r in 0..n {
                    let (i, _) = samples[r % b];
                    x[r * width] = taus[r] / demos[i].anchors.duration;
                    x[r * width + 1..(r + 1) * width].copy_from_slice(&demos[i].context);
                }
                let x = tape.constant(n, width, x);
                let cols = self.nets.iter().map(|net| net.forward(tape, x)).collect::<Result<Vec<_>, _>>()?;
                tape.concat_cols(&cols)?
            }
            AuxMode::Independent => {
                // evaluate each demo's nets on its own rows, then restore order
                let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
                for r in 0..n {
                    let i = samples[r % b].0;
                    match groups.iter_mut().find(|(g, _)| *g == i) {
                        Some((_, rows)) => rows.push(r),
                        None => groups.push((i, vec![r])),
                    }
                }
                let mut blocks = Vec::with_capacity(groups.len());
                let mut order = vec![0; n];
                let mut at = 0;
                for (i, rows) in &groups {
                    let x: Vec<f64> = rows.iter().map(|&r| taus[r] / demos[*i].anchors.duration).collect();
                    let x = tape.constant(rows.len(), 1, x);
                    let cols = (0..d).map(|k| self.nets[params.net_index(*i, k)].forward(tape, x)).collect::<Result<Vec<_>, _>>()?;
                    blocks.push(tape.concat_cols(&cols)?);
                    for &r in rows {
                        order[r] = at;
                        at += 1;
                    }
                }
                let stacked = tape.concat_rows(&blocks)?;
                tape.gather_rows(stacked, order)?
            }
        };
        let blend = tape.constant(n, d, blend);
        let env = tape.constant(n, d, env);
        let bent = tape.mul(env, psi)?;
        let rho = tape.add(blend, bent)?;
        let pt: Vec<Var> = (0..POINTS).map(|p| tape.slice_rows(rho, p * b, b)).collect::<Result<_, _>>()?;
        let inv = 1.0 / (2.0 * delta);
        let v0 = tape.sub(pt[1], pt[2])?;
        let qd = tape.scale(v0, inv);
        let v1 = tape.sub(pt[3], pt[4])?;
        let qd_next = tape.scale(v1, inv);
        let dv = tape.sub(qd_next, qd)?;
        let action = tape.scale(dv, 1.0 / ts);
        Ok(AuxBatch { q: pt[0], qd, action })
    }

    pub fn gradient(&self, grads: &Gradients, shape: &AuxTrajParams) -> AuxTrajParams {
        AuxTrajParams { nets: self.nets.iter().zip(&shape.nets).map(|(v, n)| v.gradient(grads, n)).collect(), ..shape.clone() }
    }
}
