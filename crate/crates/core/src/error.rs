use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("parameter sets are not structurally congruent: {0}")]
    Incongruent(String),

    #[error("invalid network spec: {0}")]
    InvalidSpec(String),

    #[error("batch normalization in train mode needs at least 2 samples, got {0}")]
    BatchTooSmall(usize),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("degenerate partition: {0}")]
    DegeneratePartition(String),

    #[error("{path}:{line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint format error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
