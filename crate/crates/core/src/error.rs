use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed file: {0}")]
    MalformedFile(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value in {0}")]
    NonFiniteData(String),

    #[error("unknown band: {0} nm")]
    UnknownBand(u16),

    #[error("missing calibration frame: {0}")]
    MissingCalibration(String),

    #[error("histogram holds no samples")]
    EmptyHistogram,

    #[error("could not place organism {index} after {attempts} attempts")]
    PlacementFailure { index: usize, attempts: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("batch-norm running statistics are uninitialized")]
    UninitializedStats,

    #[error("invalid label {label} (expected < {classes})")]
    InvalidLabel { label: usize, classes: usize },

    #[error("invalid state: {0}")]
    StateError(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    DivergenceDetected { epoch: usize, batch: usize, loss: f64 },

    #[error("too few samples: {0}")]
    TooFewSamples(String),

    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),

    #[error("invalid class id {0}")]
    InvalidClass(usize),

    #[error("confusion matrix is empty")]
    EmptyMatrix,

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Attach the offending path to an error.
    pub fn at(self, path: impl Into<PathBuf>) -> Self {
        match self {
            Error::File { .. } => self,
            other => Error::File {
                path: path.into(),
                source: Box::new(other),
            },
        }
    }

    /// The error with any path context stripped.
    pub fn kind(&self) -> &Error {
        match self {
            Error::File { source, .. } => source.kind(),
            other => other,
        }
    }
}
