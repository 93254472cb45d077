use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset: {0}")]
    EmptyDataset(PathBuf),

    #[error("invalid data: {0}")]
    Invalid(String),

    #[error("not an XEMB file: {0}")]
    NotXemb(PathBuf),

    #[error("truncated file {path}: {message}")]
    Truncated { path: PathBuf, message: String },

    #[error("degenerate embedding: {0}")]
    DegenerateEmbedding(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("missing embedding for id {0:?}")]
    MissingEmbedding(String),

    #[error("invalid prompt template: {0}")]
    Template(String),

    #[error("scorer transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },

    #[error("scorer protocol error: {0}")]
    Protocol(String),

    #[error("non-finite gradient at parameter {0}")]
    NonFiniteGradient(usize),

    #[error("untrainable pair set: no query has a positive candidate")]
    Untrainable,

    #[error("duplicate sweep point {0}")]
    DuplicateSweepPoint(usize),

    #[error("class {0:?} has no example in the retrieval pool")]
    MissingClass(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::Invalid(message.into())
    }

    /// True when the error comes from bad input rather than a failure while running.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. }
                | Error::Transport { .. }
                | Error::Protocol(_)
                | Error::NonFiniteGradient(_)
        )
    }
}
