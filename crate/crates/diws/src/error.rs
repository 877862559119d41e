use std::fmt;
use std::path::PathBuf;

use diws_core::Error as CoreError;

#[derive(Debug)]
pub enum HarnessError {
    Core(CoreError),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    /// Malformed or schema-violating JSON in `path`.
    Json {
        path: PathBuf,
        message: String,
    },
    /// A CSV problem on a 1-based line of `path`.
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },
    /// `check` ran to completion and some instance failed.
    CheckFailed(usize),
}

impl HarnessError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.into(), source }
    }

    pub fn json(path: impl Into<PathBuf>, message: impl fmt::Display) -> Self {
        HarnessError::Json { path: path.into(), message: message.to_string() }
    }

    pub fn csv(path: impl Into<PathBuf>, line: u64, message: impl fmt::Display) -> Self {
        HarnessError::Csv { path: path.into(), line, message: message.to_string() }
    }

    /// 1 for configuration, input and usage problems, 2 for numerical
    /// failures, 3 for a failed check.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Core(CoreError::Numerical(_) | CoreError::Precondition(_)) => 2,
            HarnessError::CheckFailed(_) => 3,
            _ => 1,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Core(e) => e.fmt(f),
            HarnessError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            HarnessError::Json { path, message } => write!(f, "{}: {message}", path.display()),
            HarnessError::Csv { path, line, message } => write!(f, "{}:{line}: {message}", path.display()),
            HarnessError::CheckFailed(n) => write!(f, "{n} check instance(s) failed"),
        }
    }
}

impl std::error::Error for HarnessError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            HarnessError::Core(e) => Some(e),
            HarnessError::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}

impl From<CoreError> for HarnessError {
    fn from(e: CoreError) -> Self {
        HarnessError::Core(e)
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
