//! Run configuration: one TOML file, every section optional, unknown keys rejected.

use std::path::Path;

use collocate_core::arm::ArmSpec;
use collocate_core::aux::AuxMode;
use collocate_core::expert::{ExpertConfig, TaskSampler};
use collocate_core::policy::PolicyClass;
use collocate_core::train::{Method, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::Error;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub arm: ArmConfig,
    pub gen: GenConfig,
    pub sampler: TaskSampler,
    pub expert: ExpertConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            arm: ArmConfig::default(),
            gen: GenConfig::default(),
            sampler: TaskSampler::default(),
            expert: ExpertConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig { max_epochs: 100, ..TrainConfig::default() },
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArmConfig {
    pub link_lengths: Vec<f64>,
}

impl Default for ArmConfig {
    fn default() -> Self {
        Self { link_lengths: ArmSpec::default().link_lengths().to_vec() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub n: usize,
    pub ts: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { n: 80, ts: 0.01 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub class: PolicyClass,
    pub hidden: Vec<usize>,
    pub aux_mode: AuxMode,
    pub aux_hidden: Vec<usize>,
    /// Finite-difference step for auxiliary velocities; unset means `ts/10`.
    pub aux_delta: Option<f64>,
    /// Start ψ at zero so the auxiliary trajectory starts as the Hermite blend.
    pub aux_zero_init: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            class: PolicyClass::Nn,
            hidden: vec![64, 32],
            aux_mode: AuxMode::Joint,
            aux_hidden: vec![32, 16],
            aux_delta: None,
            aux_zero_init: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    /// Success radius, m.
    pub radius: f64,
    /// Sampled pairs for the estimated Lipschitz constant of RMP policies.
    pub lipschitz_pairs: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { radius: 0.02, lipschitz_pairs: 2000 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub sizes: Vec<usize>,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    pub classes: Vec<PolicyClass>,
    /// The last `validation` trajectories are held out; training subsets are
    /// prefixes of the rest.
    pub validation: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: vec![10, 20, 40],
            seeds: vec![0, 1, 2],
            methods: vec![Method::Bc, Method::Code],
            classes: vec![PolicyClass::Nn, PolicyClass::Rmp],
            validation: 20,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, Error> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Usage(format!("config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, Error> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Usage(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), Error> {
        self.arm_spec()?;
        let usage = |m: &str| Err(Error::Usage(m.to_string()));
        if !(self.gen.ts > 0.0 && self.gen.ts.is_finite()) {
            return usage("gen.ts must be positive");
        }
        if self.model.hidden.is_empty() || self.model.aux_hidden.is_empty() {
            return usage("model.hidden and model.aux_hidden need at least one layer");
        }
        if self.model.aux_delta.is_some_and(|d| !(d > 0.0)) {
            return usage("model.aux_delta must be positive");
        }
        if !(self.eval.radius > 0.0) {
            return usage("eval.radius must be positive");
        }
        self.train.validate().map_err(|e| Error::Usage(format!("train: {e}")))
    }

    pub fn arm_spec(&self) -> Result<ArmSpec, Error> {
        ArmSpec::new(self.arm.link_lengths.clone()).map_err(|e| Error::Usage(format!("arm: {e}")))
    }

    pub fn aux_delta(&self, ts: f64) -> f64 {
        self.model.aux_delta.unwrap_or(ts / 10.0)
    }

    /// Fills derived defaults so the written config says what actually ran.
    pub fn resolve(&mut self, ts: f64) {
        self.model.aux_delta = Some(self.aux_delta(ts));
        self.train.seed = self.seed;
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

pub fn method_from_name(s: &str) -> Option<Method> {
    [Method::Bc, Method::BcNoise, Method::Code].into_iter().find(|m| m.name() == s)
}
