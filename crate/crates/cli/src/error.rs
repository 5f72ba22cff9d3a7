use std::path::PathBuf;

use tcja_core::ErrorKind;
use thiserror::Error;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Config(String),
    #[error("{path}: {message}")]
    Data { path: PathBuf, message: String },
    /// The checkpoint cannot serve the requested network or dataset.
    #[error("{0}")]
    Mismatch(String),
    #[error("{0}")]
    NoAttention(String),
    #[error(transparent)]
    Core(#[from] tcja_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Mismatch(_) => 4,
            CliError::NoAttention(_) => 5,
            CliError::Core(e) => match e.kind() {
                ErrorKind::Config => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numeric => 3,
                ErrorKind::Checkpoint => 4,
            },
        }
    }

    pub fn data(path: impl Into<PathBuf>, err: impl ToString) -> Self {
        CliError::Data {
            path: path.into(),
            message: err.to_string(),
        }
    }
}
