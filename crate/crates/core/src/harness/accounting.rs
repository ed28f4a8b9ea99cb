//! Cost accounting per DKD round: communication rounds, local training
//! steps and distillation steps.

use serde::{Deserialize, Serialize};

/// Running totals after some number of DKD rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub dkd_rounds: usize,
    /// One broadcast/collect for local training plus one per DKD step.
    pub comm_rounds: usize,
    /// Cumulative mean (over activated clients) of local training steps.
    pub train_steps: f64,
    /// Cumulative sum of local training steps over all activated clients.
    pub train_steps_total: usize,
    pub dkd_steps: usize,
}

pub fn account_round(prev: &Accounting, j_effective: usize, steps_this_round: &[usize]) -> Accounting {
    let total: usize = steps_this_round.iter().sum();
    let mean = if steps_this_round.is_empty() {
        0.0
    } else {
        total as f64 / steps_this_round.len() as f64
    };
    Accounting {
        dkd_rounds: prev.dkd_rounds + 1,
        comm_rounds: prev.comm_rounds + 1 + j_effective,
        train_steps: prev.train_steps + mean,
        train_steps_total: prev.train_steps_total + total,
        dkd_steps: prev.dkd_steps + j_effective,
    }
}

/// One row of `rounds.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based DKD round.
    pub round: usize,
    pub comm_rounds: usize,
    pub train_steps: f64,
    pub train_steps_total: usize,
    pub dkd_steps: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
    pub wall_seconds: f64,
}
