use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the imaging, calibration and synthesis stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("unknown CFA layout {0:?}")]
    UnknownCfa(String),

    #[error("measured patches are rank-deficient (rank {rank} < 3)")]
    RankDeficient { rank: usize },

    #[error("validation failed at {path}: {reason}")]
    Validation { path: String, reason: String },

    #[error("episodes are not synchronized: {0}")]
    Unsynchronized(String),

    #[error("frame count mismatch on stream {stream}: {counts:?}")]
    FrameCountMismatch { stream: String, counts: Vec<usize> },

    #[error("{0}")]
    Unresolved(String),

    #[error("placement sampling exhausted {attempts} attempts without satisfying separation")]
    RejectionBudgetExhausted { attempts: usize },

    #[error("malformed {format} data: {reason}")]
    Format { format: &'static str, reason: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn validation(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(format: &'static str, reason: impl Into<String>) -> Self {
        Error::Format {
            format,
            reason: reason.into(),
        }
    }

    /// An I/O failure on `path`.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    /// True for errors caused by bad data rather than bad usage or the filesystem.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. }
                | Error::Unsynchronized(_)
                | Error::FrameCountMismatch { .. }
                | Error::RankDeficient { .. }
                | Error::DimensionMismatch { .. }
                | Error::UnknownCfa(_)
                | Error::Format { .. }
                | Error::Unresolved(_)
                | Error::RejectionBudgetExhausted { .. }
        )
    }
}
