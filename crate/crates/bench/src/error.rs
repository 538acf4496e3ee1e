use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    /// Invalid configuration; the message names the offending field.
    #[error("invalid config: {0}")]
    Config(String),
    #[error("capability mismatch: {0}")]
    Capability(String),
    #[error(transparent)]
    Core(#[from] bilevel_core::BilevelError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("trace parse error: {0}")]
    Trace(String),
    #[error("rate fit: {0}")]
    Rate(String),
    #[error("comparison: {0}")]
    Compare(String),
}

pub type Result<T> = std::result::Result<T, BenchError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> BenchError {
    let path = path.into();
    move |source| BenchError::Io { path, source }
}
