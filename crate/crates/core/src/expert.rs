//! Scripted demonstrator: lift off the table, then approach the goal from
//! above through a standoff funnel. Accelerations come from a hand-built
//! two-subtask motion policy (end-effector attractor plus joint damper)
//! fused with [`rmp_resolve`].

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::arm::{step, ArmError, ArmSpec, Dataset, Provenance, State, TaskMeta, Trajectory};
use crate::linalg::Matrix;
use crate::math;
use crate::policy::{rmp_resolve, SubtaskRmp};
use crate::rng::{derive_seed, seeded, Fnv64, Rng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExpertError {
    #[error("funnel direction must be a unit vector and l, sigma positive")]
    BadFunnel,
    #[error("need at least one demonstration")]
    NoSamples,
    #[error("{rejected} of {attempts} rollouts failed; the task sampler is misconfigured")]
    TooManyRejections { rejected: usize, attempts: usize },
    #[error("sample {0}: no valid task after many draws")]
    SamplerExhausted(usize),
    #[error(transparent)]
    Arm(#[from] ArmError),
}

/// Which standoff rule to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StandoffRule {
    /// `x_o = x_g − (1−η)·l·v`: offset backward along `v`, fading on the line.
    Offset,
    /// `x_o = η·x_g − (1−η)·l·v`, kept for comparison; far from the line it
    /// loses `x_g` entirely.
    Literal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FunnelParams {
    v: [f64; 2],
    l: f64,
    sigma: f64,
    goal: [f64; 2],
}

impl FunnelParams {
    pub fn new(v: [f64; 2], l: f64, sigma: f64, goal: [f64; 2]) -> Result<Self, ExpertError> {
        let n = math::hypot(v[0], v[1]);
        if !((n - 1.0).abs() <= 1e-12 && l > 0.0 && sigma > 0.0) {
            return Err(ExpertError::BadFunnel);
        }
        Ok(Self { v, l, sigma, goal })
    }

    /// Funnel weight `η = exp(−δxᵀ(I − vvᵀ)δx / 2σ²)` with `δx = x_g − x`.
    pub fn weight(&self, x: [f64; 2]) -> f64 {
        let dx = [self.goal[0] - x[0], self.goal[1] - x[1]];
        let along = dx[0] * self.v[0] + dx[1] * self.v[1];
        let perp2 = (dx[0] * dx[0] + dx[1] * dx[1] - along * along).max(0.0);
        math::exp(-perp2 / (2.0 * self.sigma * self.sigma))
    }
}

pub fn standoff_target(x: [f64; 2], f: &FunnelParams, rule: StandoffRule) -> [f64; 2] {
    let eta = f.weight(x);
    let back = (1.0 - eta) * f.l;
    let base = match rule {
        StandoffRule::Offset => 1.0,
        StandoffRule::Literal => eta,
    };
    [base * f.goal[0] - back * f.v[0], base * f.goal[1] - back * f.v[1]]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExpertConfig {
    pub y_table: f64,
    pub lift_height: f64,
    pub kp: f64,
    pub kd: f64,
    /// Distance at which the attractor pull starts to saturate.
    pub soft_radius: f64,
    pub funnel_sigma: f64,
    pub standoff_rule: StandoffRule,
    pub cspace_weight: f64,
    pub cspace_damping: f64,
    pub eps_goal: f64,
    pub eps_vel: f64,
    pub t_max: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            y_table: 0.2,
            lift_height: 0.3,
            kp: 16.0,
            kd: 8.0,
            soft_radius: 0.25,
            funnel_sigma: 0.1,
            standoff_rule: StandoffRule::Offset,
            cspace_weight: 0.01,
            cspace_damping: 4.0,
            eps_goal: 0.02,
            eps_vel: 0.05,
            t_max: 600,
        }
    }
}

impl ExpertConfig {
    fn hash_into(&self, h: &mut Fnv64) {
        for x in [
            self.y_table,
            self.lift_height,
            self.kp,
            self.kd,
            self.soft_radius,
            self.funnel_sigma,
            self.cspace_weight,
            self.cspace_damping,
            self.eps_goal,
            self.eps_vel,
        ] {
            h.write_f64(x);
        }
        h.write_u64(self.t_max as u64);
        h.write_u64(self.standoff_rule as u64);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Lifting,
    Approaching,
}

/// Expert state for one task.
#[derive(Clone, Debug)]
pub struct Expert<'a> {
    arm: &'a ArmSpec,
    cfg: &'a ExpertConfig,
    start: [f64; 2],
    funnel: FunnelParams,
    pub phase: Phase,
}

impl<'a> Expert<'a> {
    pub fn new(arm: &'a ArmSpec, cfg: &'a ExpertConfig, start: [f64; 2], goal: [f64; 2]) -> Result<Self, ExpertError> {
        let funnel = FunnelParams::new([0.0, -1.0], cfg.lift_height, cfg.funnel_sigma, goal)?;
        Ok(Self { arm, cfg, start, funnel, phase: Phase::Lifting })
    }

    /// Phase after observing the end effector at `x`.
    pub fn next_phase(&self, x: [f64; 2]) -> Phase {
        match self.phase {
            Phase::Lifting if x[1] >= self.cfg.y_table + self.cfg.lift_height => Phase::Approaching,
            p => p,
        }
    }

    pub fn target(&self, x: [f64; 2]) -> [f64; 2] {
        match self.phase {
            Phase::Lifting => [self.start[0], self.start[1] + 3.0 * self.cfg.lift_height],
            Phase::Approaching => standoff_target(x, &self.funnel, self.cfg.standoff_rule),
        }
    }

    /// `k_p·soft(x_o − x) − k_d·ẋ` with `soft(z) = z·r/√(‖z‖² + r²)`.
    fn attractor(&self, x: [f64; 2], xd: [f64; 2]) -> [f64; 2] {
        let t = self.target(x);
        let z = [t[0] - x[0], t[1] - x[1]];
        let r = self.cfg.soft_radius;
        let s = r / math::sqrt(z[0] * z[0] + z[1] * z[1] + r * r);
        [self.cfg.kp * s * z[0] - self.cfg.kd * xd[0], self.cfg.kp * s * z[1] - self.cfg.kd * xd[1]]
    }

    /// Updates the phase from the current state, then returns the action.
    pub fn act(&mut self, state: &State) -> Result<Vec<f64>, ArmError> {
        let x = self.arm.fk_position(&state.q)?;
        self.phase = self.next_phase(x);
        let d = self.arm.dof();
        let jac = self.arm.jacobian(&state.q)?;
        let v = jac.matvec(&state.qd);
        let ee = SubtaskRmp {
            accel: self.attractor(x, [v[0], v[1]]).to_vec(),
            metric: Matrix::identity(2),
            jac,
            curv: self.arm.jacobian_dot_qd(&state.q, &state.qd)?.to_vec(),
        };
        let damper = SubtaskRmp {
            accel: state.qd.iter().map(|v| -self.cfg.cspace_damping * v).collect(),
            metric: Matrix::scaled_identity(d, self.cfg.cspace_weight),
            jac: Matrix::identity(d),
            curv: vec![0.0; d],
        };
        Ok(rmp_resolve(&[ee, damper], d).accel)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskSampler {
    pub goal_center: [f64; 2],
    pub goal_std: f64,
    /// Kept clear of the inner and outer workspace boundary.
    pub reach_margin: f64,
    /// Start end-effector heights are drawn in `[y_table, y_table + start_band]`.
    pub start_band: f64,
    pub start_x: [f64; 2],
}

impl Default for TaskSampler {
    fn default() -> Self {
        Self { goal_center: [1.2, 0.6], goal_std: 0.3, reach_margin: 0.1, start_band: 0.1, start_x: [0.5, 1.5] }
    }
}

impl TaskSampler {
    fn hash_into(&self, h: &mut Fnv64) {
        for x in self.goal_center.iter().chain(&[self.goal_std, self.reach_margin, self.start_band]).chain(&self.start_x) {
            h.write_f64(*x);
        }
    }

    pub fn reachable(&self, arm: &ArmSpec, p: [f64; 2]) -> bool {
        let ls = arm.link_lengths();
        let inner = if ls.len() == 2 { (ls[0] - ls[1]).abs() } else { 0.0 };
        let r = math::hypot(p[0], p[1]);
        r > inner + self.reach_margin && r < arm.reach() - self.reach_margin
    }

    /// A goal reachable together with its standoff point, above the table.
    pub fn sample_goal(&self, arm: &ArmSpec, cfg: &ExpertConfig, rng: &mut Rng) -> Option<[f64; 2]> {
        let n = Normal::new(0.0, self.goal_std).ok()?;
        for _ in 0..1000 {
            let g = [self.goal_center[0] + n.sample(rng), self.goal_center[1] + n.sample(rng)];
            let above = [g[0], g[1] + cfg.lift_height];
            if g[1] >= cfg.y_table && self.reachable(arm, g) && self.reachable(arm, above) {
                return Some(g);
            }
        }
        None
    }

    /// An elbow-up configuration at rest with the end effector just above
    /// the table, whose lift target is reachable.
    pub fn sample_start(&self, arm: &ArmSpec, cfg: &ExpertConfig, rng: &mut Rng) -> Option<State> {
        let d = arm.dof();
        for _ in 0..100_000 {
            let mut q = vec![0.0; d];
            q[0] = rng.random_range(0.0..1.6);
            for qk in q.iter_mut().skip(1) {
                *qk = rng.random_range(-2.6..-0.2);
            }
            let p = arm.fk_position(&q).ok()?;
            let lift = [p[0], p[1] + 3.0 * cfg.lift_height];
            if p[1] >= cfg.y_table
                && p[1] <= cfg.y_table + self.start_band
                && p[0] >= self.start_x[0]
                && p[0] <= self.start_x[1]
                && self.reachable(arm, lift)
            {
                return Some(State::rest(q));
            }
        }
        None
    }
}

/// Runs the expert from `s0` until the goal is held or `t_max` steps pass.
/// Returns the trajectory and whether the goal was reached.
pub fn run_expert(arm: &ArmSpec, cfg: &ExpertConfig, s0: State, goal: [f64; 2], ts: f64) -> Result<(Trajectory, bool), ExpertError> {
    let start = arm.fk_position(&s0.q)?;
    let mut expert = Expert::new(arm, cfg, start, goal)?;
    let mut states = vec![s0];
    let mut actions = Vec::new();
    let mut reached = false;
    for _ in 0..cfg.t_max {
        let s = states.last().expect("non-empty");
        let a = expert.act(s)?;
        let next = step(s, &a, ts)?;
        let p = arm.fk_position(&next.q)?;
        let done =
            expert.phase == Phase::Approaching && math::hypot(p[0] - goal[0], p[1] - goal[1]) < cfg.eps_goal && math::norm(&next.qd) < cfg.eps_vel;
        states.push(next);
        actions.push(a);
        if done {
            reached = true;
            break;
        }
    }
    let last = states.last().expect("non-empty");
    let end = arm.fk(&last.q)?;
    let start_pose = arm.fk(&states[0].q)?;
    let meta = TaskMeta { start_ee: start_pose, goal_ee: [goal[0], goal[1], end[2]], features: vec![] };
    Ok((Trajectory { id: 0, ts, states, actions: Some(actions), meta, expert: true }, reached))
}

/// Largest end-effector height before the end of the trajectory.
pub fn max_height(arm: &ArmSpec, tr: &Trajectory) -> f64 {
    tr.states.iter().filter_map(|s| arm.fk_position(&s.q).ok()).fold(f64::NEG_INFINITY, |m, p| m.max(p[1]))
}

/// `n` expert demonstrations. Sample `k` draws from its own derived seed, so
/// the result does not depend on generation order.
pub fn generate_dataset(n: usize, sampler: &TaskSampler, arm: &ArmSpec, cfg: &ExpertConfig, ts: f64, seed: u64) -> Result<Dataset, ExpertError> {
    if n == 0 {
        return Err(ExpertError::NoSamples);
    }
    let mut out = Vec::with_capacity(n);
    let mut rejected = 0usize;
    for k in 0..n {
        let mut rng = seeded(derive_seed(seed, k as u64));
        let mut attempts = 0;
        loop {
            attempts += 1;
            if attempts > 50 {
                return Err(ExpertError::SamplerExhausted(k));
            }
            let goal = sampler.sample_goal(arm, cfg, &mut rng).ok_or(ExpertError::SamplerExhausted(k))?;
            let s0 = sampler.sample_start(arm, cfg, &mut rng).ok_or(ExpertError::SamplerExhausted(k))?;
            let (mut tr, reached) = run_expert(arm, cfg, s0, goal, ts)?;
            if reached {
                tr.id = k as u64;
                out.push(tr);
                break;
            }
            rejected += 1;
        }
    }
    let attempts = n + rejected;
    if rejected * 5 > attempts {
        return Err(ExpertError::TooManyRejections { rejected, attempts });
    }
    Ok(Dataset { ts, arm: arm.clone(), trajectories: out, provenance: Provenance { seed, config_digest: config_digest(sampler, arm, cfg, ts) } })
}

/// Digest of everything that shapes a generated dataset besides the seed.
pub fn config_digest(sampler: &TaskSampler, arm: &ArmSpec, cfg: &ExpertConfig, ts: f64) -> u64 {
    let mut h = Fnv64::default();
    sampler.hash_into(&mut h);
    cfg.hash_into(&mut h);
    arm.link_lengths().iter().for_each(|l| h.write_f64(*l));
    h.write_f64(ts);
    h.finish()
}
