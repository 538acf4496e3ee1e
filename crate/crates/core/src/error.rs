use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BilevelError {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular system (pivot {pivot:.3e} at column {column})")]
    SingularSystem { pivot: f64, column: usize },

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("problem lacks capability: {0}")]
    MissingCapability(&'static str),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for BilevelError {
    fn from(e: std::io::Error) -> Self {
        BilevelError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, BilevelError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(BilevelError::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
