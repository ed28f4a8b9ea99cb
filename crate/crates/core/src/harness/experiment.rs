//! Turns an [`ExperimentConfig`] into data, a model and a federated run.

use std::path::Path;

use crate::data::{
    generate_synthetic, load_csv, partition_multisource, stratified_split, AffineTransform,
    ClientShard, Dataset, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::fed::rng::{derive_seed, Purpose, SERVER};
use crate::fed::{run_federated_observed, FederatedConfig, Federation, RunAborted, RunOutcome};
use crate::harness::config::{DataSpec, ExperimentConfig};
use crate::harness::report::{summarize, Summary};
use crate::harness::RoundRecord;
use crate::model::Network;
use crate::scalar::Scalar;

// Data stream tags.
const TRAIN: u64 = 0;
const TEST: u64 = 1;
const SPLIT: u64 = 2;
const PARTITION: u64 = 3;
const TRANSFORM: u64 = 4;

#[derive(Debug, Clone)]
pub struct Experiment<T: Scalar = f64> {
    pub network: Network,
    pub shards: Vec<ClientShard<T>>,
    pub validation: Option<Dataset<T>>,
    pub test: Dataset<T>,
    pub fed: FederatedConfig,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult<T: Scalar = f64> {
    pub outcome: RunOutcome<T>,
    pub summary: Summary,
}

fn data_seed(master: u64, owner: u64, tag: u64) -> u64 {
    derive_seed(master, owner, 0, Purpose::Data(tag))
}

/// Generates or loads the data, splits off validation, partitions across
/// clients and builds the network. Relative CSV paths resolve against `base_dir`.
pub fn build_experiment<T: Scalar>(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Experiment<T>> {
    cfg.validate()?;
    let seed = cfg.seed;
    let split_seed = data_seed(seed, SERVER, SPLIT);
    let (shards, validation, test) = match &cfg.data {
        DataSpec::MultiSource {
            dim,
            per_class,
            test_per_class,
            transform_strength,
            ..
        } => {
            let mut sources = Vec::with_capacity(cfg.clients);
            let mut vals = Vec::new();
            let mut tests = Vec::with_capacity(cfg.clients);
            for k in 0..cfg.clients as u64 {
                let transform = AffineTransform::random(*dim, *transform_strength, data_seed(seed, k, TRANSFORM));
                let spec = |n, tag| {
                    cfg.synthetic_spec(n, data_seed(seed, k, tag), Some(transform.clone()))
                        .expect("synthetic source")
                };
                let full: Dataset<T> = generate_synthetic(&spec(*per_class, TRAIN))?;
                let (train, val) = stratified_split(&full, cfg.validation_fraction, data_seed(seed, k, SPLIT))?;
                sources.push(train);
                vals.extend(val);
                tests.push(generate_synthetic::<T>(&spec(*test_per_class, TEST))?);
            }
            let validation = if vals.is_empty() {
                None
            } else {
                Some(Dataset::concat(&vals.iter().collect::<Vec<_>>())?)
            };
            let test = Dataset::concat(&tests.iter().collect::<Vec<_>>())?;
            (partition_multisource(&sources)?, validation, test)
        }
        DataSpec::Synthetic {
            per_class,
            test_per_class,
            transform,
            ..
        } => {
            let spec = |n, tag| {
                cfg.synthetic_spec(n, data_seed(seed, SERVER, tag), transform.clone())
                    .expect("synthetic source")
            };
            let full: Dataset<T> = generate_synthetic(&spec(*per_class, TRAIN))?;
            let test = generate_synthetic(&spec(*test_per_class, TEST))?;
            let (train, validation) = stratified_split(&full, cfg.validation_fraction, split_seed)?;
            (partition(cfg, &train)?, validation, test)
        }
        DataSpec::Csv { train, test } => {
            let full: Dataset<T> = load_csv(&base_dir.join(train))?;
            let test: Dataset<T> = load_csv(&base_dir.join(test))?;
            if full.dim() != test.dim() || full.num_classes() != test.num_classes() {
                return Err(Error::InvalidDataset(format!(
                    "train has {} features and {} classes but test has {} and {}",
                    full.dim(),
                    full.num_classes(),
                    test.dim(),
                    test.num_classes()
                )));
            }
            let (train, validation) = stratified_split(&full, cfg.validation_fraction, split_seed)?;
            (partition(cfg, &train)?, validation, test)
        }
    };
    let network = Network::mlp(test.dim(), &cfg.model.hidden, test.num_classes(), cfg.model.batch_norm)?
        .with_bn_momentum(cfg.model.bn_momentum);
    Ok(Experiment {
        network,
        shards,
        validation,
        test,
        fed: cfg.federated_config(),
    })
}

fn partition<T: Scalar>(cfg: &ExperimentConfig, train: &Dataset<T>) -> Result<Vec<ClientShard<T>>> {
    PartitionSpec {
        scheme: cfg.partition,
        clients: cfg.clients,
        seed: data_seed(cfg.seed, SERVER, PARTITION),
    }
    .apply(train)
}

/// Builds and runs `cfg`, then summarizes the history.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    base_dir: &Path,
    observer: &mut (dyn FnMut(&RoundRecord) + Send),
) -> std::result::Result<ExperimentResult<T>, RunAborted> {
    let exp: Experiment<T> = build_experiment(cfg, base_dir).map_err(|error| RunAborted {
        error,
        history: Vec::new(),
    })?;
    let fed = Federation {
        network: &exp.network,
        shards: exp.shards,
        validation: exp.validation.as_ref(),
        test: &exp.test,
    };
    let outcome = run_federated_observed(fed, &exp.fed, None, observer)?;
    let summary = summarize(outcome.history(), cfg, None);
    Ok(ExperimentResult { outcome, summary })
}
