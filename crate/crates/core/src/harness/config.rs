//! The JSON experiment file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{AffineTransform, PartitionScheme, SyntheticSpec};
use crate::error::{Error, Result};
use crate::fed::{BnMode, DkdConfig, FederatedConfig, LocalTrainConfig, LocalTrainerKind};
use crate::model::DEFAULT_BN_MOMENTUM;
use crate::numerics::OptimizerConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "fedavg")]
    FedAvg,
    #[serde(rename = "fedprox")]
    FedProx,
    #[serde(rename = "fedmax")]
    FedMax,
    #[serde(rename = "fedbn")]
    FedBn,
    #[serde(rename = "feddkd")]
    FedDkd,
    #[serde(rename = "feddkd_max")]
    FedDkdMax,
    #[serde(rename = "feddkd_bn")]
    FedDkdBn,
}

impl Algorithm {
    pub const ALL: [Algorithm; 7] = [
        Algorithm::FedAvg,
        Algorithm::FedProx,
        Algorithm::FedMax,
        Algorithm::FedBn,
        Algorithm::FedDkd,
        Algorithm::FedDkdMax,
        Algorithm::FedDkdBn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::FedAvg => "fedavg",
            Algorithm::FedProx => "fedprox",
            Algorithm::FedMax => "fedmax",
            Algorithm::FedBn => "fedbn",
            Algorithm::FedDkd => "feddkd",
            Algorithm::FedDkdMax => "feddkd_max",
            Algorithm::FedDkdBn => "feddkd_bn",
        }
    }

    pub fn uses_distillation(self) -> bool {
        matches!(self, Algorithm::FedDkd | Algorithm::FedDkdMax | Algorithm::FedDkdBn)
    }

    pub fn bn_mode(self) -> BnMode {
        match self {
            Algorithm::FedBn | Algorithm::FedDkdBn => BnMode::PerClient,
            _ => BnMode::Shared,
        }
    }

    pub fn trainer(self, mu: f64, beta: f64) -> LocalTrainerKind {
        match self {
            Algorithm::FedProx => LocalTrainerKind::Prox { mu },
            Algorithm::FedMax | Algorithm::FedDkdMax => LocalTrainerKind::Max { beta },
            _ => LocalTrainerKind::Plain,
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lowered = s.trim().to_ascii_lowercase();
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == lowered)
            .ok_or_else(|| {
                let names: Vec<&str> = Algorithm::ALL.iter().map(|a| a.name()).collect();
                Error::Config(format!("unknown algorithm '{s}' (expected one of {})", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Widths of the hidden Dense→[BN]→ReLU blocks.
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default = "default_bn_momentum")]
    pub bn_momentum: f64,
}

fn default_bn_momentum() -> f64 {
    DEFAULT_BN_MOMENTUM
}

/// Where samples come from. Sampling seeds are derived from the run seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Gaussian blobs around fixed class centers.
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        test_per_class: usize,
        spread: f64,
        #[serde(default)]
        transform: Option<AffineTransform>,
    },
    /// One blob dataset per client, each under its own random affine map.
    MultiSource {
        classes: usize,
        dim: usize,
        /// Per client.
        per_class: usize,
        /// Per client; the test set is the union over clients.
        test_per_class: usize,
        spread: f64,
        transform_strength: f64,
    },
    /// `label,f1,...,fD` files; relative paths resolve against the config file.
    Csv { train: PathBuf, test: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub algorithm: Algorithm,
    /// Number of clients K.
    pub clients: usize,
    #[serde(default = "one")]
    pub client_fraction: f64,
    /// DKD rounds T.
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(default = "one")]
    pub lr_round_decay: f64,
    #[serde(default = "default_optimizer")]
    pub optimizer: OptimizerConfig,
    /// Proximal coefficient, used by `fedprox`.
    #[serde(default)]
    pub mu: f64,
    /// Activation-entropy coefficient, used by `fedmax` and `feddkd_max`.
    #[serde(default)]
    pub beta: f64,
    /// Distillation settings, used by the `feddkd*` algorithms.
    #[serde(default)]
    pub dkd: DkdConfig,
    pub partition: PartitionScheme,
    pub model: ModelSpec,
    pub data: DataSpec,
    #[serde(default)]
    pub target_accuracy: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub validation_fraction: f64,
    /// Worker threads; 0 lets the pool decide.
    #[serde(default)]
    pub workers: usize,
    #[serde(default)]
    pub record_wall_clock: bool,
}

fn one() -> f64 {
    1.0
}

fn default_optimizer() -> OptimizerConfig {
    OptimizerConfig::Sgd {
        momentum: 0.0,
        weight_decay: 0.0,
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("schema_version").and_then(serde_json::Value::as_u64) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(v) => {
                return Err(Error::Config(format!(
                    "unsupported schema_version {v} (this build reads {SCHEMA_VERSION})"
                )))
            }
            None => return Err(Error::Config("missing integer field 'schema_version'".into())),
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.clients == 0 {
            return bad("clients must be ≥ 1".into());
        }
        if !(self.client_fraction > 0.0 && self.client_fraction <= 1.0) {
            return bad(format!("client_fraction must lie in (0, 1], got {}", self.client_fraction));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        for (name, v) in [("lr", self.lr), ("lr_round_decay", self.lr_round_decay)] {
            if v <= 0.0 || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        for (name, v) in [("mu", self.mu), ("beta", self.beta)] {
            if v < 0.0 || !v.is_finite() {
                return bad(format!("{name} must be ≥ 0, got {v}"));
            }
        }
        if !(0.0..=0.5).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must lie in [0, 0.5], got {}",
                self.validation_fraction
            ));
        }
        if let Some(t) = self.target_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("target_accuracy must lie in [0, 1], got {t}"));
            }
        }
        if self.dkd.bn_mode == BnMode::PerClient && self.algorithm.bn_mode() == BnMode::Shared {
            return bad(format!(
                "dkd.bn_mode = per_client conflicts with algorithm {}; use fedbn or feddkd_bn",
                self.algorithm
            ));
        }
        if self.algorithm.bn_mode() == BnMode::PerClient && !self.model.batch_norm {
            return bad(format!("{} needs model.batch_norm = true", self.algorithm));
        }
        if self.model.hidden.contains(&0) {
            return bad("hidden widths must be positive".into());
        }
        let multi_data = matches!(self.data, DataSpec::MultiSource { .. });
        let multi_part = matches!(self.partition, PartitionScheme::MultiSource);
        if multi_data != multi_part {
            return bad("multi_source data and the multi_source partition go together".into());
        }
        match &self.data {
            DataSpec::Synthetic { classes, dim, per_class, test_per_class, spread, .. }
            | DataSpec::MultiSource { classes, dim, per_class, test_per_class, spread, .. } => {
                if *classes < 2 || *dim == 0 || *per_class == 0 || *test_per_class == 0 {
                    return bad("synthetic data needs ≥ 2 classes and positive sizes".into());
                }
                if *spread <= 0.0 || !spread.is_finite() {
                    return bad(format!("spread must be positive, got {spread}"));
                }
            }
            DataSpec::Csv { .. } => {}
        }
        self.federated_config().validate()
    }

    /// The distillation settings the algorithm actually runs with.
    pub fn effective_dkd(&self) -> DkdConfig {
        let mut dkd = self.dkd;
        if !self.algorithm.uses_distillation() {
            dkd.steps = 0;
        }
        dkd.bn_mode = self.algorithm.bn_mode();
        dkd
    }

    pub fn federated_config(&self) -> FederatedConfig {
        FederatedConfig {
            rounds: self.rounds,
            client_fraction: self.client_fraction,
            local: LocalTrainConfig {
                epochs: self.local_epochs,
                batch_size: self.batch_size,
                lr: self.lr,
                optimizer: self.optimizer,
                kind: self.algorithm.trainer(self.mu, self.beta),
            },
            lr_round_decay: self.lr_round_decay,
            dkd: self.effective_dkd(),
            master_seed: self.seed,
            workers: self.workers,
            record_wall_clock: self.record_wall_clock,
        }
    }

    /// The synthetic spec for one source; `None` for CSV data.
    pub(crate) fn synthetic_spec(&self, per_class: usize, seed: u64, transform: Option<AffineTransform>) -> Option<SyntheticSpec> {
        match &self.data {
            DataSpec::Synthetic { classes, dim, spread, .. }
            | DataSpec::MultiSource { classes, dim, spread, .. } => Some(SyntheticSpec {
                classes: *classes,
                dim: *dim,
                per_class,
                spread: *spread,
                transform,
                seed,
            }),
            DataSpec::Csv { .. } => None,
        }
    }
}
