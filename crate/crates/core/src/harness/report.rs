//! `rounds.csv` and `summary.json`.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, ExperimentConfig};
use crate::harness::RoundRecord;

pub const ROUND_CSV_HEADER: &str =
    "round,comm_rounds,train_steps,dkd_steps,train_loss,val_acc,test_acc,wall_seconds";

/// The CSV text for `history`: header plus one row per round, 6-decimal floats, LF endings.
pub fn format_round_csv(history: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (history.len() + 1));
    out.push_str(ROUND_CSV_HEADER);
    out.push('\n');
    for r in history {
        writeln!(
            out,
            "{},{},{:.6},{},{:.6},{:.6},{:.6},{:.6}",
            r.round,
            r.comm_rounds,
            r.train_steps,
            r.dkd_steps,
            r.train_loss,
            r.val_acc,
            r.test_acc,
            r.wall_seconds
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_round_csv(history: &[RoundRecord], path: &Path) -> Result<()> {
    std::fs::write(path, format_round_csv(history)).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct CsvRow {
    round: usize,
    comm_rounds: usize,
    train_steps: f64,
    dkd_steps: usize,
    train_loss: f64,
    val_acc: f64,
    test_acc: f64,
    wall_seconds: f64,
}

/// Parses a file written by [`write_round_csv`]. `train_steps_total` is not
/// stored in the CSV and reads back as 0.
pub fn read_round_csv(path: &Path) -> Result<Vec<RoundRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::Csv {
        path: path.to_path_buf(),
        line: 0,
        message: e.to_string(),
    })?;
    let header = reader
        .headers()
        .map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if header != ROUND_CSV_HEADER {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: format!("unexpected header '{header}'"),
        });
    }
    reader
        .deserialize::<CsvRow>()
        .map(|row| {
            let r = row.map_err(|e| Error::Csv {
                path: path.to_path_buf(),
                line: e.position().map_or(0, |p| p.line()),
                message: e.to_string(),
            })?;
            Ok(RoundRecord {
                round: r.round,
                comm_rounds: r.comm_rounds,
                train_steps: r.train_steps,
                train_steps_total: 0,
                dkd_steps: r.dkd_steps,
                train_loss: r.train_loss,
                val_acc: r.val_acc,
                test_acc: r.test_acc,
                wall_seconds: r.wall_seconds,
            })
        })
        .collect()
}

/// Metrics of one round as reported in the summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundPoint {
    pub round: usize,
    pub comm_rounds: usize,
    pub train_steps: f64,
    pub train_steps_total: usize,
    pub dkd_steps: usize,
    pub train_loss: f64,
    pub val_acc: f64,
    pub test_acc: f64,
}

impl From<&RoundRecord> for RoundPoint {
    fn from(r: &RoundRecord) -> Self {
        Self {
            round: r.round,
            comm_rounds: r.comm_rounds,
            train_steps: r.train_steps,
            train_steps_total: r.train_steps_total,
            dkd_steps: r.dkd_steps,
            train_loss: r.train_loss,
            val_acc: r.val_acc,
            test_acc: r.test_acc,
        }
    }
}

/// First round whose validation accuracy reached the target, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetHit {
    pub target_accuracy: f64,
    pub reached: bool,
    pub round: Option<usize>,
    pub comm_rounds: Option<usize>,
    pub train_steps: Option<f64>,
    pub dkd_steps: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub algorithm: Algorithm,
    pub seed: u64,
    pub rounds_completed: usize,
    #[serde(rename = "final")]
    pub last: Option<RoundPoint>,
    /// Round with the highest validation accuracy (earliest on ties); its
    /// `test_acc` is the headline number.
    pub best: Option<RoundPoint>,
    pub target: Option<TargetHit>,
    /// Set when the run stopped early.
    pub error: Option<String>,
    pub config: ExperimentConfig,
}

/// First round with `val_acc ≥ target`.
pub fn target_hit(history: &[RoundRecord], target: f64) -> TargetHit {
    let hit = history.iter().find(|r| r.val_acc >= target);
    TargetHit {
        target_accuracy: target,
        reached: hit.is_some(),
        round: hit.map(|r| r.round),
        comm_rounds: hit.map(|r| r.comm_rounds),
        train_steps: hit.map(|r| r.train_steps),
        dkd_steps: hit.map(|r| r.dkd_steps),
    }
}

/// Earliest round with the highest validation accuracy.
pub fn best_on_validation(history: &[RoundRecord]) -> Option<&RoundRecord> {
    history
        .iter()
        .fold(None, |best: Option<&RoundRecord>, r| match best {
            Some(b) if b.val_acc >= r.val_acc => Some(b),
            _ => Some(r),
        })
}

pub fn summarize(history: &[RoundRecord], cfg: &ExperimentConfig, error: Option<String>) -> Summary {
    Summary {
        algorithm: cfg.algorithm,
        seed: cfg.seed,
        rounds_completed: history.len(),
        last: history.last().map(RoundPoint::from),
        best: best_on_validation(history).map(RoundPoint::from),
        target: cfg.target_accuracy.map(|t| target_hit(history, t)),
        error,
        config: cfg.clone(),
    }
}

pub fn write_summary(summary: &Summary, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
