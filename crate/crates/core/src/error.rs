//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Dimension or extent mismatch; the message names the offending shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// Invalid or inconsistent configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (files, meshes, matrices).
    #[error("data error: {0}")]
    Data(String),

    /// Numeric failure: non-finite values, non-convergence, degeneracy.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Training-loop failure (non-finite loss or gradient); the step is aborted.
    #[error("training error: {0}")]
    Training(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
