use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, the controller and the file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Validation(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: line {line}: {message}")]
    Format {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data: need at least {needed} samples, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error(
        "degenerate distribution: median and 75th percentile are both {value} ms; \
         widen the trace so the unbounded run covers more distinct load levels"
    )]
    Degenerate { value: f64 },

    #[error("controller contract violation: sample for second {got} after second {last}")]
    OutOfOrder { last: u64, got: u64 },

    #[error("runs are not comparable: {0}")]
    ComparisonInvalid(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status for the CLI: 1 validation, 2 IO, 3 degenerate data.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::Degenerate { .. } | Error::InsufficientData { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
