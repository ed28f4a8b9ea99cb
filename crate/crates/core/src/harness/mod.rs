//! Configuration, cost accounting, evaluation, reporting and the CLI.

mod accounting;
mod cli;
mod config;
mod eval;
mod experiment;
mod report;

pub use accounting::{account_round, Accounting, RoundRecord};
pub use cli::{resolve_config, run, run_cli, Args};
pub use config::{Algorithm, DataSpec, ExperimentConfig, ModelSpec, SCHEMA_VERSION};
pub use eval::{evaluate, Evaluation};
pub use experiment::{build_experiment, run_experiment, Experiment, ExperimentResult};
pub use report::{
    best_on_validation, format_round_csv, read_round_csv, summarize, target_hit, write_round_csv,
    write_summary, RoundPoint, Summary, TargetHit, ROUND_CSV_HEADER,
};
