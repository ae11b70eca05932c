use std::io;
use std::path::PathBuf;

/// Failure of a pipeline invocation, classified by exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("{0}")]
    Invalid(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{0}")]
    Core(#[from] brainalign::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            CliError::MissingInput(path)
        } else {
            CliError::Io { path, source }
        }
    }

    /// 2 missing input, 3 invalid data, 4 numerical failure, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        use brainalign::Error as E;
        match self {
            CliError::MissingInput(_) => 2,
            CliError::Invalid(_) => 3,
            CliError::Io { .. } => 1,
            CliError::Core(e) => match e {
                E::Io { source, .. } if source.kind() == io::ErrorKind::NotFound => 2,
                E::Io { .. } => 1,
                E::Format(_) | E::Shape(_) | E::Dtype(_) | E::Validation(_) => 3,
                E::DegenerateInput(_) | E::ScoreUndefined(_) | E::Fit { .. } | E::TestUndefined(_) => 4,
            },
        }
    }

    /// One-line diagnostic, including the error class for engine errors.
    pub fn diagnostic(&self) -> String {
        match self {
            CliError::Core(brainalign::Error::Fit { message, pool_curve }) => {
                let curve: Vec<String> = pool_curve
                    .iter()
                    .map(|p| format!("{}:{}", p.pool_size, p.mean_r))
                    .collect();
                format!("FitError: {message} (pool curve {})", curve.join(", "))
            }
            CliError::Core(e) => format!("{}: {e}", e.kind_name()),
            other => other.to_string(),
        }
    }
}

macro_rules! invalid {
    ($($arg:tt)*) => { $crate::error::CliError::Invalid(format!($($arg)*)) };
}
pub(crate) use invalid;
