use std::io;
use std::path::PathBuf;

use crate::ceiling::PoolPoint;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the scoring engine.
///
/// The variants mirror the failure classes the pipeline distinguishes when
/// choosing an exit status: missing inputs, invalid data, and numerical
/// failures.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("dtype error: {0}")]
    Dtype(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("score undefined: {0}")]
    ScoreUndefined(String),

    #[error("fit error: {message}")]
    Fit {
        message: String,
        pool_curve: Vec<PoolPoint>,
    },

    #[error("test undefined: {0}")]
    TestUndefined(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short name of the error class, used in CLI diagnostics.
    pub fn kind_name(&self) -> &'static str {
        match self {
            Error::Io { .. } => "IoError",
            Error::Format(_) => "FormatError",
            Error::Shape(_) => "ShapeError",
            Error::Dtype(_) => "DtypeError",
            Error::Validation(_) => "ValidationError",
            Error::DegenerateInput(_) => "DegenerateInput",
            Error::ScoreUndefined(_) => "ScoreUndefined",
            Error::Fit { .. } => "FitError",
            Error::TestUndefined(_) => "TestUndefined",
        }
    }
}

macro_rules! validation {
    ($($arg:tt)*) => {
        $crate::error::Error::Validation(format!($($arg)*))
    };
}
pub(crate) use validation;
