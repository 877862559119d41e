use alloc::string::String;
use core::fmt;

/// Errors raised by the core algorithms.
///
/// The variants map onto the harness exit codes: configuration and usage
/// problems are caller mistakes, numerical and precondition failures mean the
/// math could not be carried out faithfully.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// An invalid setting (dimension zero, non-positive regularizer, ...).
    Config(String),
    /// An API misuse such as a shape mismatch or unknown parameter.
    Usage(String),
    /// A linear solve or similar routine failed or produced non-finite output.
    Numerical(String),
    /// An input violated a documented mathematical precondition.
    Precondition(String),
    /// Malformed textual input; `position` is a 1-based character or line index.
    Parse { position: usize, message: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Config(m) => write!(f, "configuration error: {m}"),
            Error::Usage(m) => write!(f, "usage error: {m}"),
            Error::Numerical(m) => write!(f, "numerical error: {m}"),
            Error::Precondition(m) => write!(f, "precondition violated: {m}"),
            Error::Parse { position, message } => {
                write!(f, "parse error at {position}: {message}")
            }
        }
    }
}

impl core::error::Error for Error {}

macro_rules! usage {
    ($($arg:tt)*) => { $crate::Error::Usage(alloc::format!($($arg)*)) };
}
macro_rules! config {
    ($($arg:tt)*) => { $crate::Error::Config(alloc::format!($($arg)*)) };
}
macro_rules! numerical {
    ($($arg:tt)*) => { $crate::Error::Numerical(alloc::format!($($arg)*)) };
}
pub(crate) use {config, numerical, usage};
