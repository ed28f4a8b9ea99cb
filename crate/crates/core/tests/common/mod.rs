#![allow(dead_code)]

use std::path::PathBuf;

use feddkd::data::{generate_synthetic, Dataset, SyntheticSpec};
use feddkd::fed::{DkdConfig, FederatedConfig, LocalTrainConfig, LocalTrainerKind};
use feddkd::harness::ExperimentConfig;
use feddkd::numerics::OptimizerConfig;

pub fn blobs(classes: usize, dim: usize, per_class: usize, spread: f64, seed: u64) -> Dataset {
    generate_synthetic(&SyntheticSpec {
        classes,
        dim,
        per_class,
        spread,
        transform: None,
        seed,
    })
    .unwrap()
}

pub fn fed_config(rounds: usize, steps: usize) -> FederatedConfig {
    FederatedConfig {
        rounds,
        client_fraction: 1.0,
        local: LocalTrainConfig {
            epochs: 1,
            batch_size: 8,
            lr: 0.05,
            optimizer: OptimizerConfig::Sgd {
                momentum: 0.9,
                weight_decay: 1e-4,
            },
            kind: LocalTrainerKind::Plain,
        },
        lr_round_decay: 0.98,
        dkd: DkdConfig {
            steps,
            batch_size: 16,
            ..DkdConfig::default()
        },
        master_seed: 7,
        workers: 2,
        record_wall_clock: false,
    }
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

pub fn small_experiment() -> ExperimentConfig {
    ExperimentConfig::from_json(
        r#"{
        "schema_version": 1,
        "algorithm": "feddkd",
        "clients": 4,
        "client_fraction": 0.75,
        "rounds": 4,
        "local_epochs": 1,
        "batch_size": 16,
        "lr": 0.05,
        "lr_round_decay": 0.98,
        "optimizer": { "kind": "sgd", "momentum": 0.9, "weight_decay": 0.0005 },
        "dkd": { "steps": 2, "batch_size": 32 },
        "partition": { "scheme": "dirichlet", "alpha": 0.3 },
        "model": { "hidden": [12] },
        "data": { "source": "synthetic", "classes": 4, "dim": 6, "per_class": 60,
                  "test_per_class": 20, "spread": 1.2 },
        "target_accuracy": 0.5,
        "seed": 11,
        "validation_fraction": 0.1
    }"#,
    )
    .unwrap()
}
