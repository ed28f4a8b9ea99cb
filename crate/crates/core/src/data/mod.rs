//! Datasets, synthetic generators, client partitioning and CSV ingestion.

mod csv_io;
mod dataset;
mod partition;
mod synthetic;

pub use csv_io::{load_csv, write_csv};
pub use dataset::{stratified_split, Dataset};
pub use partition::{
    compute_weights, largest_remainder, partition_classes_per_client, partition_dirichlet,
    partition_multisource, sample_dirichlet, weights_from_sizes, ClientShard, PartitionScheme,
    PartitionSpec, DIRICHLET_RETRIES,
};
pub use synthetic::{class_centers, generate_synthetic, AffineTransform, SyntheticSpec, CENTER_RADIUS};
