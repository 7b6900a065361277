use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid bounds: {0}")]
    InvalidBounds(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown test function `{0}`")]
    UnknownFunction(String),

    #[error("requested {requested} neighbors but dataset has {available} samples")]
    TooFewSamples { requested: usize, available: usize },

    #[error("degenerate {0}")]
    Degenerate(&'static str),

    #[error("training aborted at step {step}: non-finite loss (total={total}, L1={l1}, L2={l2}, L3={l3})")]
    TrainingAborted {
        step: usize,
        total: f64,
        l1: f64,
        l2: f64,
        l3: f64,
    },

    #[error("checkpoint version mismatch: file has version {found}, this build reads version {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl Error {
    /// Stable identifier for machine-readable error reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::EmptyDataset => "empty_dataset",
            Error::InvalidBounds(_) => "invalid_bounds",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::UnknownFunction(_) => "unknown_function",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::Degenerate(_) => "degenerate",
            Error::TrainingAborted { .. } => "training_aborted",
            Error::VersionMismatch { .. } => "version_mismatch",
            Error::CorruptCheckpoint(_) => "corrupt_checkpoint",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }
}
