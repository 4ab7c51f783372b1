//! Adam and plateau-based learning-rate decay.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::diff::DiffError;
use crate::math;

/// How weight decay enters the update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// `p ← p·(1 − lr·wd)` before the Adam step; decay never touches the moments.
    Decoupled,
    /// `g ← g + wd·p` (L2 penalty folded into the gradient).
    Coupled,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay_mode: DecayMode,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 1e-10, decay_mode: DecayMode::Decoupled }
    }
}

/// First and second moments, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let (m, v) = sizes.into_iter().map(|n| (vec![0.0; n], vec![0.0; n])).unzip();
        Self { m, v, step: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One Adam update over a list of tensors. Nothing is modified if any
/// gradient entry is non-finite.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState, lr: f64, cfg: &AdamConfig) -> Result<(), DiffError> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(DiffError::Shape { op: "adam_step", detail: "tensor count mismatch" });
    }
    for (tensor, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[tensor].len() {
            return Err(DiffError::Shape { op: "adam_step", detail: "tensor length mismatch" });
        }
        if let Some(index) = g.iter().position(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite { tensor, index });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - math::powi(cfg.beta1, t);
    let bc2 = 1.0 - math::powi(cfg.beta2, t);
    let shrink = 1.0 - lr * cfg.weight_decay;
    for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[k], &mut state.v[k]);
        for i in 0..p.len() {
            let mut gi = g[i];
            match cfg.decay_mode {
                DecayMode::Decoupled => p[i] *= shrink,
                DecayMode::Coupled => gi += cfg.weight_decay * p[i],
            }
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (math::sqrt(vhat) + cfg.eps);
        }
    }
    Ok(())
}

/// What the scheduler decided after an epoch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Plateau {
    Improving,
    Waiting,
    Decayed,
    /// Plateau reached while already at the minimum learning rate.
    Exhausted,
}

/// Multiplies the learning rate by `factor` once the loss has failed to
/// improve on its best value by more than `threshold` for `patience`
/// consecutive epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlateauScheduler {
    lr: f64,
    factor: f64,
    patience: usize,
    min_lr: f64,
    threshold: f64,
    best: f64,
    stale: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, min_lr: f64, threshold: f64) -> Self {
        Self { lr, factor, patience, min_lr, threshold, best: f64::INFINITY, stale: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn observe(&mut self, loss: f64) -> Plateau {
        if loss < self.best - self.threshold {
            self.best = loss;
            self.stale = 0;
            return Plateau::Improving;
        }
        self.stale += 1;
        if self.stale < self.patience {
            return Plateau::Waiting;
        }
        self.stale = 0;
        if self.lr <= self.min_lr {
            return Plateau::Exhausted;
        }
        self.lr = (self.lr * self.factor).max(self.min_lr);
        Plateau::Decayed
    }
}
