use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = FsruError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum FsruError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("empty transform axis")]
    EmptyAxis,

    #[error("empty filter bank")]
    EmptyFilterBank,

    #[error("unknown token {id} (vocabulary size {vocab_size})")]
    UnknownToken { id: usize, vocab_size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("loss is not a scalar: shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite loss at epoch {epoch}, batch {batch} (value {value})")]
    NonFiniteLoss { epoch: usize, batch: usize, value: f64 },

    #[error("array `{name}` has shape {found:?}, expected {expected:?}")]
    ArrayShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("missing array `{0}`")]
    MissingArray(String),

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("dataset line {line}: {message}")]
    Dataset { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl FsruError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        FsruError::Io {
            path: path.into(),
            source,
        }
    }
}
