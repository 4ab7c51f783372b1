//! Central finite-difference verification of analytic gradients.
//!
//! The loss must be smooth at the checked point; kinks such as `|p|` at zero
//! make the central difference meaningless and are the caller's problem.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;

use crate::diff::DiffError;
use crate::mlp::ParamSet;
use crate::rng::seeded;

/// Which parameter entries to perturb.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entries {
    All,
    /// At most `per_tensor` entries from each tensor, chosen with `seed`.
    Sample {
        per_tensor: usize,
        seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    /// max |g_analytic − g_central| / max(1, |g_central|)
    pub max_rel_error: f64,
    /// (tensor, index) of the worst entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

/// Difference quotient used for the reference derivative.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, error `O(h²)`.
    Central,
    /// `(f(x−2h) − 8f(x−h) + 8f(x+h) − f(x+2h)) / 12h`, error `O(h⁴)`.
    /// Allows a larger `h` when the loss itself carries rounding noise.
    FivePoint,
    /// Ridders' extrapolation: central differences from `h` down by factors
    /// of two, Richardson-extrapolated, keeping the entry with the smallest
    /// error estimate.
    Ridders,
}

fn ridders(h: f64, mut at: impl FnMut(f64) -> f64) -> f64 {
    const ROWS: usize = 10;
    const SHRINK: f64 = 2.0;
    const SAFE: f64 = 2.0;
    let mut tab = [[0.0_f64; ROWS]; ROWS];
    let mut step = h;
    tab[0][0] = (at(step) - at(-step)) / (2.0 * step);
    let (mut best, mut err) = (tab[0][0], f64::INFINITY);
    for i in 1..ROWS {
        step /= SHRINK;
        tab[0][i] = (at(step) - at(-step)) / (2.0 * step);
        let mut fac = SHRINK * SHRINK;
        for j in 1..=i {
            tab[j][i] = (tab[j - 1][i] * fac - tab[j - 1][i - 1]) / (fac - 1.0);
            fac *= SHRINK * SHRINK;
            let e = (tab[j][i] - tab[j - 1][i]).abs().max((tab[j][i] - tab[j - 1][i - 1]).abs());
            if e <= err {
                err = e;
                best = tab[j][i];
            }
        }
        if (tab[i][i] - tab[i - 1][i - 1]).abs() >= SAFE * err {
            break;
        }
    }
    best
}

/// Compares `analytic` against central differences of `loss` around
/// `params` with step `h`.
pub fn finite_diff_check<P, F>(params: &P, analytic: &P, h: f64, entries: Entries, loss: F) -> Result<CheckReport, DiffError>
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    finite_diff_check_with(params, analytic, h, Stencil::Central, entries, loss)
}

/// [`finite_diff_check`] with a chosen stencil.
pub fn finite_diff_check_with<P, F>(
    params: &P,
    analytic: &P,
    h: f64,
    stencil: Stencil,
    entries: Entries,
    mut loss: F,
) -> Result<CheckReport, DiffError>
where
    P: ParamSet,
    F: FnMut(&P) -> f64,
{
    if !(h > 0.0) {
        return Err(DiffError::InvalidStep(h));
    }
    let sizes = params.tensor_sizes();
    if sizes != analytic.tensor_sizes() {
        return Err(DiffError::Shape { op: "finite_diff_check", detail: "gradient shape differs from parameters" });
    }
    let mut work = params.clone();
    let grads: Vec<Vec<f64>> = analytic.tensors().iter().map(|t| t.to_vec()).collect();
    let mut report = CheckReport { max_rel_error: 0.0, worst: (0, 0), checked: 0 };
    for (tensor, &len) in sizes.iter().enumerate() {
        let picks: Vec<usize> = match entries {
            Entries::All => (0..len).collect(),
            Entries::Sample { per_tensor, seed } => {
                if per_tensor >= len {
                    (0..len).collect()
                } else {
                    let mut rng = seeded(crate::rng::derive_seed(seed, tensor as u64));
                    let mut v = sample(&mut rng, len, per_tensor).into_vec();
                    v.sort_unstable();
                    v
                }
            }
        };
        for index in picks {
            let orig = work.tensors()[tensor][index];
            let mut at = |dx: f64| {
                work.tensors_mut()[tensor][index] = orig + dx;
                loss(&work)
            };
            let values: Vec<f64> = match stencil {
                Stencil::Central => vec![at(h), at(-h)],
                Stencil::FivePoint => vec![at(h), at(-h), at(2.0 * h), at(-2.0 * h)],
                Stencil::Ridders => vec![ridders(h, &mut at)],
            };
            work.tensors_mut()[tensor][index] = orig;
            if values.iter().any(|v| !v.is_finite()) {
                return Err(DiffError::NonFiniteLoss { tensor, index });
            }
            let central = match stencil {
                Stencil::Central => (values[0] - values[1]) / (2.0 * h),
                Stencil::FivePoint => (8.0 * (values[0] - values[1]) - (values[2] - values[3])) / (12.0 * h),
                Stencil::Ridders => values[0],
            };
            let err = (grads[tensor][index] - central).abs() / central.abs().max(1.0);
            if err > report.max_rel_error || report.checked == 0 {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = (tensor, index);
                }
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
