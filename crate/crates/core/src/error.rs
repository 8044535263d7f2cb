use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the sampling engine and its supporting components.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}:{line}: expected dimension {expected}, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}:{line}: duplicate id `{id}`")]
    DuplicateId {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("{path}:{line}: zero vector for id `{id}`")]
    ZeroVector {
        path: PathBuf,
        line: usize,
        id: String,
    },

    #[error("invalid embedding store: {0}")]
    InvalidStore(String),

    #[error("unknown query id `{0}`")]
    UnknownQuery(String),

    #[error("unknown product id `{0}`")]
    UnknownProduct(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid corpus: {0}")]
    InvalidCorpus(String),

    #[error("augmentation failed: {0}")]
    Augmentation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty candidate pool for query `{query_id}`")]
    EmptyPool { query_id: String },

    #[error("training diverged at epoch {epoch}: non-finite {what} (learning rate too high?)")]
    Diverged { epoch: usize, what: &'static str },

    #[error("infeasible synthetic geometry: {0}")]
    Geometry(String),

    #[error("{0}")]
    Json(#[from] serde_json::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from malformed or inconsistent input rather
    /// than a failure while processing valid input.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Parse { .. }
                | Error::DimensionMismatch { .. }
                | Error::DuplicateId { .. }
                | Error::ZeroVector { .. }
                | Error::InvalidStore(_)
                | Error::UnknownQuery(_)
                | Error::UnknownProduct(_)
                | Error::InvalidCorpus(_)
                | Error::Config(_)
                | Error::Geometry(_)
        )
    }
}
