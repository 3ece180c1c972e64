use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the harness.
///
/// Each variant maps to a distinct process exit code, see [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    /// The on-disk layout is not what we expect (e.g. a missing class folder).
    #[error("structural error: {0}")]
    Structural(String),

    /// Data is present but violates a precondition (too few images, unbalanced set…).
    #[error("validation error: {0}")]
    Validation(String),

    /// A caller passed a value outside the operation's domain.
    #[error("argument error: {0}")]
    Argument(String),

    /// The command line was malformed.
    #[error("usage error: {0}")]
    Usage(String),

    /// A file or other external resource is missing or unwritable.
    #[error("resource error: {0}")]
    Resource(String),

    /// A loss or metric became NaN / infinite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A checkpoint or config file could not be parsed.
    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) | Error::Argument(_) => 2,
            Error::Structural(_) | Error::Validation(_) | Error::Format(_) => 3,
            Error::Resource(_) | Error::Io { .. } => 4,
            Error::Numeric(_) => 5,
            Error::Tensor(_) => 1,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Format(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
