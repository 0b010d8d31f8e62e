use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the toolkit's pipeline stages.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A line-oriented input file contained a record we could not parse.
    /// `line` is 1-based.
    #[error("{path}:{line}: {msg}")]
    Malformed { path: PathBuf, line: u64, msg: String },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("document id {id} out of range (corpus has {total} documents)")]
    DocIdOutOfRange { id: u64, total: u64 },

    #[error("invalid index file {path}: {msg}")]
    IndexFormat { path: PathBuf, msg: String },

    #[error("duplicate example id {0:?}")]
    DuplicateId(String),

    #[error("{0}")]
    InvalidInput(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn malformed(path: impl Into<PathBuf>, line: u64, msg: impl Into<String>) -> Self {
        Error::Malformed { path: path.into(), line, msg: msg.into() }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
