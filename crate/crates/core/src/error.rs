use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("self-loop on node `{0}` rejected")]
    SelfLoop(String),

    #[error("node `{0}` already exists")]
    DuplicateNode(String),

    #[error("unknown node `{0}`")]
    UnknownNode(String),

    #[error("node index {index} out of range for {len} nodes")]
    NodeIndexOutOfRange { index: usize, len: usize },

    #[error("token index {index} out of range for vocabulary of size {size}")]
    TokenOutOfRange { index: usize, size: usize },

    #[error("dense {what} refused: N = {n} exceeds the guard of {limit}")]
    TooLarge {
        what: &'static str,
        n: usize,
        limit: usize,
    },

    #[error("matrix not positive definite: smallest pivot {pivot:e} at position {index}")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("backward called without a cached forward pass")]
    MissingCache,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("non-finite loss at epoch {epoch}, step {step}: {snapshot}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        snapshot: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("tensor `{name}` is truncated: expected {expected} bytes, found {found}")]
    TruncatedTensor {
        name: String,
        expected: u64,
        found: u64,
    },

    #[error("tensor `{name}`: {message}")]
    Tensor { name: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed manifest: {0}")]
    Manifest(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(
        context: &'static str,
        expected: impl ToString,
        actual: impl ToString,
    ) -> Self {
        Error::DimensionMismatch {
            context,
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
