use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed input document.
    #[error("{location}: parse error: {message}")]
    Parse { location: String, message: String },

    /// Well-formed input that breaks a data invariant. `record` locates the
    /// first offending record, e.g. `annotations[3]`.
    #[error("{record}: {message}")]
    Validation { record: String, message: String },

    /// A configuration that cannot be satisfied.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Inputs are valid but there is nothing to evaluate or fuse.
    #[error("{0}")]
    Empty(String),
}

impl Error {
    pub(crate) fn validation(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            record: record.into(),
            message: message.into(),
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
