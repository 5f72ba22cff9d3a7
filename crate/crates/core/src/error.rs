use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Every failure the engine can report.
///
/// Variants are grouped by the subsystem that raises them so callers (the CLI
/// in particular) can map them onto exit codes with [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: output dimension underflow (input {input:?}, kernel {kernel}, padding {padding}, stride {stride})")]
    DimensionUnderflow {
        op: &'static str,
        input: Vec<usize>,
        kernel: usize,
        padding: usize,
        stride: usize,
    },
    #[error("{op}: kernel size {kernel} exceeds padded length {padded}")]
    KernelTooLong {
        op: &'static str,
        kernel: usize,
        padded: usize,
    },
    #[error("{op}: dimension {dim} is not divisible by {by}")]
    NotDivisible {
        op: &'static str,
        dim: usize,
        by: usize,
    },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{0}")]
    InvalidArgument(String),

    #[error("architecture spec: {0}")]
    Arch(String),
    #[error("layer {index} ({layer}): {message}")]
    Layer {
        index: usize,
        layer: String,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed event data at byte offset {offset}: {message}")]
    MalformedEvents { offset: u64, message: String },
    #[error("event record {index}: {message}")]
    EventOutOfBounds { index: usize, message: String },
    #[error("dataset: {0}")]
    Dataset(String),

    #[error("loss became NaN at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },
    #[error("no gradient for trainable parameter `{0}`")]
    MissingGradient(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

/// Coarse classification of [`Error`] used for exit-code mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
    Checkpoint,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. }
            | Error::MalformedEvents { .. }
            | Error::EventOutOfBounds { .. }
            | Error::Dataset(_) => ErrorKind::Data,
            Error::NanLoss { .. } | Error::MissingGradient(_) => ErrorKind::Numeric,
            Error::Checkpoint(_) => ErrorKind::Checkpoint,
            _ => ErrorKind::Config,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
