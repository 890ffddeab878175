use std::path::PathBuf;

use thiserror::Error;

use crate::linalg::ShapeError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Top-level error for every fallible operation in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Shape(#[from] ShapeError),

    #[error(transparent)]
    Data(#[from] DataError),

    #[error(transparent)]
    Config(#[from] crate::config::ConfigError),

    #[error(transparent)]
    Checkpoint(#[from] crate::checkpoint::CheckpointError),

    #[error(transparent)]
    Pretrain(#[from] PretrainError),

    #[error("model too large for exact enumeration: {n_visible} visible + {n_hidden} hidden units exceeds {limit}")]
    TooLargeToEnumerate {
        n_visible: usize,
        n_hidden: usize,
        limit: usize,
    },

    #[error("malformed trace: {0}")]
    MalformedTrace(String),

    #[error("cannot compare runs with different configurations ({left} vs {right})")]
    MismatchedReports { left: String, right: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while reading or splitting a dataset.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: cannot read: {source}")]
    Unreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file, expected {expected} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image file has {images} entries but label file has {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: label {label} at index {index} is outside 0..=9")]
    BadLabel {
        path: PathBuf,
        index: usize,
        label: u8,
    },
    #[error("class {class} has {available} examples, {requested} requested for validation")]
    InsufficientClass {
        class: u8,
        available: usize,
        requested: usize,
    },
    #[error("dataset has {cols} features but the architecture expects {expected}")]
    FeatureMismatch { cols: usize, expected: usize },
}

/// Failures of a pre-training run as a whole.
#[derive(Debug, Error)]
pub enum PretrainError {
    #[error("worker {worker} failed: {message}")]
    WorkerFailed { worker: usize, message: String },
    #[error("worker {worker} received a corrupted payload (input version {version})")]
    CorruptPayload { worker: usize, version: u64 },
    #[error("no progress from any worker for {seconds:.1}s; aborting pre-training")]
    Deadlock { seconds: f64 },
}
