use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = RcdError> = std::result::Result<T, E>;

/// Errors raised while reading inputs or fitting models.
#[derive(Debug, Error)]
pub enum RcdError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: header must be `{expected}`, found `{found}`")]
    Header {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("{path}:{line}: {message}")]
    Row {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate probe_id {0}")]
    DuplicateProbe(String),

    #[error("probe {probe_id}: inverted interval [{j5}, {j3}] (need j5 < j3)")]
    InvertedInterval { probe_id: String, j5: i64, j3: i64 },

    #[error("reference design violated: {0}")]
    Design(String),

    #[error("dangling references: {0}")]
    Dangling(String),

    #[error("unpaired spot: {0}")]
    UnpairedSpot(String),

    #[error("genes differ: {0} vs {1}")]
    GeneMismatch(String, String),

    #[error("insufficient replication: {0}")]
    InsufficientReplication(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("variance-ratio search did not converge: {0}")]
    NonConvergence(String),

    #[error("singular information matrix")]
    SingularInformation,

    #[error("covariance not positive semidefinite: {0}")]
    NotPositiveSemidefinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl RcdError {
    pub(crate) fn row(path: &std::path::Path, line: u64, message: impl Into<String>) -> Self {
        RcdError::Row {
            path: path.to_path_buf(),
            line,
            message: message.into(),
        }
    }

    /// True for errors caused by bad input files rather than model failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            RcdError::Io { .. }
                | RcdError::Csv { .. }
                | RcdError::Header { .. }
                | RcdError::Row { .. }
                | RcdError::DuplicateProbe(_)
                | RcdError::InvertedInterval { .. }
                | RcdError::Design(_)
                | RcdError::Dangling(_)
                | RcdError::UnpairedSpot(_)
                | RcdError::InvalidArgument(_)
        )
    }
}
