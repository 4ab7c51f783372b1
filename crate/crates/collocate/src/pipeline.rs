//! Model construction, training and auditing shared by the commands.

use collocate_core::arm::Dataset;
use collocate_core::aux::AuxTrajParams;
use collocate_core::eval::{estimate_lipschitz, theorem_audit, BoundAudit, LipschitzKind};
use collocate_core::policy::{Policy, PolicyClass};
use collocate_core::rng::{derive_seed, seeded};
use collocate_core::train::{train_observed, EpochRecord, Method, TrainError, TrainOutcome};

use crate::config::RunConfig;
use crate::Error;

pub fn feature_dim(ds: &Dataset) -> Result<usize, Error> {
    let mut dims = ds.trajectories.iter().map(|t| t.meta.policy_features().len());
    let first = dims.next().ok_or_else(|| Error::Data("dataset is empty".into()))?;
    if dims.any(|d| d != first) {
        return Err(Error::Data("trajectories disagree on task feature length".into()));
    }
    Ok(first)
}

/// Fresh policy and, for collocation, auxiliary parameters; seeded from `cfg.seed`.
pub fn init_models(cfg: &RunConfig, method: Method, class: PolicyClass, ds: &Dataset) -> Result<(Policy, Option<AuxTrajParams>), Error> {
    let fdim = feature_dim(ds)?;
    let dof = ds.arm.dof();
    let policy = Policy::init(class, dof, fdim, &cfg.model.hidden, &mut seeded(derive_seed(cfg.seed, 1)));
    let aux = (method == Method::Code).then(|| {
        AuxTrajParams::init(
            cfg.model.aux_mode,
            dof,
            ds.len(),
            3 + fdim,
            &cfg.model.aux_hidden,
            cfg.aux_delta(ds.ts),
            cfg.model.aux_zero_init,
            &mut seeded(derive_seed(cfg.seed, 2)),
        )
    });
    Ok((policy, aux))
}

pub fn train_models(
    cfg: &RunConfig,
    method: Method,
    ds: &Dataset,
    (policy, aux): (Policy, Option<AuxTrajParams>),
    observe: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    let train_cfg = collocate_core::train::TrainConfig { method, seed: cfg.seed, ..cfg.train.clone() };
    train_observed(ds, policy, aux, &train_cfg, observe)
}

pub fn train_error(e: TrainError) -> Error {
    match e {
        TrainError::NonFinite { epoch, .. } => Error::Numeric(format!("non-finite loss at epoch {epoch}")),
        TrainError::Config(m) => Error::Usage(format!("train: {m}")),
        e @ (TrainError::Diff(_) | TrainError::Policy(_)) => Error::Numeric(e.to_string()),
        e => Error::Data(e.to_string()),
    }
}

/// Bound audit with the certified constant for nn policies and a sampled
/// estimate (flagged) for RMP policies.
pub fn audit(cfg: &RunConfig, policy: &Policy, aux: Option<&AuxTrajParams>, ds: &Dataset) -> Result<BoundAudit, Error> {
    let numeric = |e: collocate_core::policy::PolicyError| Error::Numeric(e.to_string());
    let (l, kind) = match policy.class() {
        PolicyClass::Nn => (policy.certified_lipschitz(ds.ts).map_err(numeric)?, LipschitzKind::Certified),
        PolicyClass::Rmp => {
            let mut rng = seeded(derive_seed(cfg.seed, 3));
            (estimate_lipschitz(policy, &ds.arm, ds, cfg.eval.lipschitz_pairs, &mut rng).map_err(numeric)?, LipschitzKind::Estimated)
        }
    };
    theorem_audit(policy, &ds.arm, ds, aux, l, kind).map_err(numeric)
}
