use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Mode;
use crate::numerics::OptimizerConfig;

/// Objective used by clients during local training.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LocalTrainerKind {
    /// Cross-entropy on the local labels.
    Plain,
    /// Adds `(mu/2)·‖w − w_broadcast‖²`.
    Prox { mu: f64 },
    /// Adds `beta·(1/B)·Σ_i KL(softmax(a_i) ‖ U)` over penultimate activations.
    Max { beta: f64 },
}

impl LocalTrainerKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LocalTrainerKind::Prox { mu: v } | LocalTrainerKind::Max { beta: v }
                if v < 0.0 || !v.is_finite() =>
            {
                Err(Error::Config(format!("trainer coefficient must be ≥ 0, got {v}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BnMode {
    /// BN tensors are averaged, broadcast and distilled like any other.
    #[default]
    Shared,
    /// Each client keeps its own BN tensors; only non-BN tensors are shared.
    PerClient,
}

/// How client distillation gradients are combined each DKD step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DkdAggregation {
    /// `q_k = 1/m` over the sampled clients.
    #[default]
    Uniform,
    /// `q_k = n_k / Σ n_i` over the sampled clients.
    SampleWeighted,
}

/// Teacher-vs-student discrepancy minimized by distillation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Divergence {
    SoftCrossEntropy { temperature: f64 },
    /// `½‖s − t‖²` on raw outputs; used for linear-model analysis.
    SquaredError,
}

impl Default for Divergence {
    fn default() -> Self {
        Divergence::SoftCrossEntropy { temperature: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DkdConfig {
    /// DKD steps per round; 0 reduces to parameter averaging.
    pub steps: usize,
    pub gamma0: f64,
    pub gamma_round_decay: f64,
    pub gamma_step_decay: f64,
    pub batch_size: usize,
    /// Rounds (counted from 0) during which distillation is skipped.
    pub warmup_rounds: usize,
    pub bn_mode: BnMode,
    pub aggregation: DkdAggregation,
    pub divergence: Divergence,
    #[serde(with = "mode_serde")]
    pub student_mode: Mode,
}

impl Default for DkdConfig {
    fn default() -> Self {
        Self {
            steps: 0,
            gamma0: 0.2,
            gamma_round_decay: 1.0,
            gamma_step_decay: 1.0,
            batch_size: 64,
            warmup_rounds: 0,
            bn_mode: BnMode::Shared,
            aggregation: DkdAggregation::Uniform,
            divergence: Divergence::default(),
            student_mode: Mode::Train,
        }
    }
}

impl DkdConfig {
    pub fn effective_steps(&self, round: usize) -> usize {
        if round < self.warmup_rounds {
            0
        } else {
            self.steps
        }
    }

    /// `γ_{t,j} = gamma0 · gamma_round_decay^t · gamma_step_decay^j`, both indices from 0.
    pub fn learning_rate(&self, round: usize, step: usize) -> f64 {
        self.gamma0
            * self.gamma_round_decay.powi(round as i32)
            * self.gamma_step_decay.powi(step as i32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("dkd.{name} must be positive, got {v}")))
            }
        };
        if self.steps > 0 {
            positive("gamma0", self.gamma0)?;
            positive("gamma_round_decay", self.gamma_round_decay)?;
            positive("gamma_step_decay", self.gamma_step_decay)?;
            if self.batch_size == 0 {
                return Err(Error::Config("dkd.batch_size must be ≥ 1".into()));
            }
        }
        if let Divergence::SoftCrossEntropy { temperature } = self.divergence {
            positive("temperature", temperature)?;
        }
        Ok(())
    }
}

mod mode_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    use crate::model::Mode;

    pub fn serialize<S: Serializer>(mode: &Mode, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match mode {
            Mode::Train => "train",
            Mode::Eval => "eval",
        })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mode, D::Error> {
        match String::deserialize(d)?.as_str() {
            "train" => Ok(Mode::Train),
            "eval" => Ok(Mode::Eval),
            other => Err(serde::de::Error::unknown_variant(other, &["train", "eval"])),
        }
    }
}

/// Client-side optimization schedule for one round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerConfig,
    pub kind: LocalTrainerKind,
}
