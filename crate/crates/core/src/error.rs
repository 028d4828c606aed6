use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("no precomputed video features for video `{video_id}` at {path}")]
    MissingFeatures { video_id: String, path: PathBuf },

    #[error("format error: {0}")]
    Format(String),

    #[error("line {line}: {message}")]
    Validation { line: usize, message: String },

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("non-finite loss in batch {batch} (epoch {epoch}, step {step})")]
    NonFiniteLoss { epoch: usize, step: usize, batch: String },

    #[error("usage error: {0}")]
    Usage(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code for the command line: 2 for anything the user can
    /// fix in their inputs, 3 for numeric failure, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonFiniteLoss { .. } => 3,
            Error::Config(_)
            | Error::Input(_)
            | Error::Format(_)
            | Error::Validation { .. }
            | Error::Sampling(_)
            | Error::Usage(_)
            | Error::MissingFeatures { .. } => 2,
            Error::Io { .. } => 1,
        }
    }
}
