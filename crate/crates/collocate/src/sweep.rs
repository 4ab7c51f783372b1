//! Data-efficiency sweep: every (method, class, size, seed) trains on a
//! prefix of the training pool and is evaluated on a fixed held-out tail.

use std::collections::BTreeSet;
use std::path::Path;

use collocate_core::arm::Dataset;
use collocate_core::eval::evaluate;
use collocate_core::policy::PolicyClass;
use collocate_core::train::Method;
use rayon::prelude::*;

use crate::checkpoint::{self, Checkpoint};
use crate::config::RunConfig;
use crate::pipeline::{init_models, train_error, train_models};
use crate::report::{self, ReportMeta, SweepRow};
use crate::{sha256_hex, Error};

#[derive(Clone, Debug, PartialEq)]
pub struct Job {
    pub method: Method,
    pub class: PolicyClass,
    pub size: usize,
    pub seed: u64,
}

impl Job {
    pub fn run_id(&self) -> String {
        format!("{}_{}_n{}_s{}", self.method.name(), self.class.name(), self.size, self.seed)
    }
}

/// Training pool and validation set; errors when they overlap or a size
/// exceeds the pool.
pub fn split(ds: &Dataset, validation: usize, sizes: &[usize]) -> Result<(Dataset, Dataset), Error> {
    if validation == 0 || validation >= ds.len() {
        return Err(Error::Usage(format!("validation count {validation} must lie in 1..{}", ds.len())));
    }
    let pool_len = ds.len() - validation;
    if let Some(&big) = sizes.iter().find(|&&s| s == 0 || s > pool_len) {
        return Err(Error::Usage(format!("training size {big} not in 1..={pool_len}")));
    }
    let pool = ds.select(&(0..pool_len).collect::<Vec<_>>());
    let val = ds.select(&(pool_len..ds.len()).collect::<Vec<_>>());
    let train_ids: BTreeSet<u64> = pool.trajectories.iter().map(|t| t.id).collect();
    if val.trajectories.iter().any(|t| train_ids.contains(&t.id)) {
        return Err(Error::Data("validation trajectories share ids with the training pool".into()));
    }
    Ok((pool, val))
}

pub fn jobs(cfg: &RunConfig) -> Vec<Job> {
    let s = &cfg.sweep;
    let mut out = Vec::new();
    for &method in &s.methods {
        for &class in &s.classes {
            for &size in &s.sizes {
                for &seed in &s.seeds {
                    out.push(Job { method, class, size, seed });
                }
            }
        }
    }
    out
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    /// Per-run `(trajectory id, rmse)` on the validation set; empty for failures.
    pub rmse: Vec<Vec<(u64, f64)>>,
}

fn run_one(cfg: &RunConfig, job: &Job, pool: &Dataset, val: &Dataset, out: Option<&Path>) -> Result<(SweepRow, Vec<(u64, f64)>), Error> {
    let train_ds = pool.select(&(0..job.size).collect::<Vec<_>>());
    let run_cfg = RunConfig { seed: job.seed, ..cfg.clone() };
    let models = init_models(&run_cfg, job.method, job.class, &train_ds)?;
    let outcome = train_models(&run_cfg, job.method, &train_ds, models, &mut |_| {}).map_err(train_error)?;
    let report = evaluate(&outcome.policy, &val.arm, val, cfg.eval.radius);
    let final_loss = outcome.history.epochs.last().map_or(f64::NAN, |e| e.total);
    let row = SweepRow::from_report(
        job.run_id(),
        job.method.name(),
        job.class.name(),
        job.size,
        job.seed,
        outcome.history.epochs.len(),
        final_loss,
        &report,
    );
    if let Some(root) = out {
        let dir = root.join("runs").join(job.run_id());
        let policy_ck = Checkpoint::Policy(outcome.policy.clone());
        checkpoint::save(&dir.join("policy.ckpt"), &policy_ck)?;
        if let Some(a) = &outcome.aux {
            checkpoint::save(&dir.join("aux.ckpt"), &Checkpoint::Aux(a.clone()))?;
        }
        report::write_history(&dir.join("history.csv"), &outcome.history.epochs)?;
        let meta = ReportMeta {
            policy: job.class.name(),
            checkpoint_sha256: &sha256_hex(&checkpoint::encode(&policy_ck)),
            data_sha256: &format!("{:016x}", val.digest()),
        };
        report::write_eval(&dir, &report, &meta)?;
    }
    Ok((row, report.trajectory_ids.iter().copied().zip(report.rmse.iter().copied()).collect()))
}

/// Runs every job on a pool of `threads` workers. Failed runs are recorded
/// in their row and do not stop the sweep. Row order follows [`jobs`].
pub fn run(cfg: &RunConfig, ds: &Dataset, threads: usize, out: Option<&Path>) -> Result<SweepOutput, Error> {
    let (pool, val) = split(ds, cfg.sweep.validation, &cfg.sweep.sizes)?;
    let jobs = jobs(cfg);
    let workers = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build().map_err(|e| Error::Usage(e.to_string()))?;
    let results: Vec<(SweepRow, Vec<(u64, f64)>)> = workers.install(|| {
        jobs.par_iter()
            .map(|job| {
                run_one(cfg, job, &pool, &val, out).unwrap_or_else(|e| {
                    (SweepRow::failed(job.run_id(), job.method.name(), job.class.name(), job.size, job.seed, e.to_string()), Vec::new())
                })
            })
            .collect()
    });
    let (rows, rmse) = results.into_iter().unzip();
    Ok(SweepOutput { rows, rmse })
}
