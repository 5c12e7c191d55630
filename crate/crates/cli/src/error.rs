use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("{0}")]
    Usage(String),

    #[error("config `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: line {line}: {msg}", path.display())]
    Csv { path: PathBuf, line: u64, msg: String },

    #[error("checkpoint {} is corrupt: {reason}", path.display())]
    Corrupt { path: PathBuf, reason: String },

    #[error("checkpoint {} uses format version {found}; this build reads version {supported}", path.display())]
    UnsupportedVersion { path: PathBuf, found: u32, supported: u32 },

    #[error("checkpoint {} holds a {found} network, but this command needs a {expected} network", path.display())]
    KindMismatch {
        path: PathBuf,
        found: String,
        expected: String,
    },

    #[error(transparent)]
    Core(#[from] amortize::Error),
}

pub type AppResult<T> = std::result::Result<T, AppError>;

impl AppError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        AppError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        AppError::Config {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit status: 1 usage, 2 data or configuration, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        use amortize::Error as E;
        match self {
            AppError::Usage(_) => 1,
            AppError::Core(
                E::NonFiniteGradient { .. } | E::NonFiniteLoss { .. } | E::Numeric(_) | E::TimeoutBudget { .. },
            ) => 3,
            _ => 2,
        }
    }
}
