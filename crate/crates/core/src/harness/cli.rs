use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::Parser;

use crate::error::{Error, Result};
use crate::harness::config::{Algorithm, ExperimentConfig};
use crate::harness::experiment::run_experiment;
use crate::harness::report::{summarize, write_round_csv, write_summary, Summary};
use crate::harness::RoundRecord;

/// Run a federated training simulation described by a JSON config.
#[derive(Debug, Parser)]
#[command(name = "simulate", version)]
pub struct Args {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where rounds.csv and summary.json are written.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Overrides the config's `algorithm`.
    #[arg(long)]
    pub algorithm: Option<String>,
    /// Suppress per-round progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

/// Parses `args` (program name first), runs the experiment and writes its
/// outputs. Returns the process exit code.
pub fn run_cli<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(&args) {
        Ok(_) => 0,
        Err(e) => {
            eprintln!("simulate: {e}");
            1
        }
    }
}

/// Loads the config named by `args` and applies the flag overrides.
pub fn resolve_config(args: &Args) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(name) = &args.algorithm {
        cfg.algorithm = name.parse::<Algorithm>()?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(args: &Args) -> Result<Summary> {
    let cfg = resolve_config(args)?;
    let base = args
        .config
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    std::fs::create_dir_all(&args.out_dir).map_err(|e| Error::io(&args.out_dir, e))?;
    let csv_path = args.out_dir.join("rounds.csv");
    let summary_path = args.out_dir.join("summary.json");

    let quiet = args.quiet;
    let mut progress = |r: &RoundRecord| {
        if !quiet {
            eprintln!(
                "round {:>4}  comm {:>6}  loss {:.4}  val {:.4}  test {:.4}",
                r.round, r.comm_rounds, r.train_loss, r.val_acc, r.test_acc
            );
        }
    };
    match run_experiment::<f64>(&cfg, &base, &mut progress) {
        Ok(res) => {
            write_round_csv(res.outcome.history(), &csv_path)?;
            write_summary(&res.summary, &summary_path)?;
            if !quiet {
                report(&res.summary);
            }
            Ok(res.summary)
        }
        Err(aborted) => {
            let summary = summarize(&aborted.history, &cfg, Some(aborted.error.to_string()));
            write_round_csv(&aborted.history, &csv_path)?;
            write_summary(&summary, &summary_path)?;
            Err(Error::Config(aborted.to_string()))
        }
    }
}

fn report(summary: &Summary) {
    if let Some(best) = &summary.best {
        eprintln!(
            "{}: best val {:.4} at round {} (test {:.4}, comm {})",
            summary.algorithm, best.val_acc, best.round, best.test_acc, best.comm_rounds
        );
    }
    if let Some(t) = &summary.target {
        match (t.round, t.comm_rounds) {
            (Some(r), Some(c)) => eprintln!("target {:.4} reached at round {r} (comm {c})", t.target_accuracy),
            _ => eprintln!("target {:.4} not reached", t.target_accuracy),
        }
    }
}
