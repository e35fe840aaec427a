//! Crate-wide error type.

use thiserror::Error;

/// Errors raised by graph construction, parsing, numerics, and training.
#[derive(Debug, Error)]
pub enum Error {
    /// An input violated a documented precondition or invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Tensor shapes incompatible for an operation.
    #[error("shape mismatch in {op}: {details}")]
    Shape { op: &'static str, details: String },

    /// A dataset file could not be interpreted.
    #[error("format error in {file}, line {line}: {message}")]
    Format {
        file: String,
        line: usize,
        message: String,
    },

    /// Filesystem failure, annotated with the offending path.
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Bad configuration key or value.
    #[error("config error: {0}")]
    Config(String),

    /// An internal API contract was broken by the caller.
    #[error("contract violation: {0}")]
    Contract(String),

    /// Training diverged or produced non-finite values.
    #[error("runtime failure: {0}")]
    Runtime(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
