use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("backend failure (retryable): {0}")]
    Retryable(String),

    #[error("backend protocol error: {0}")]
    Protocol(String),

    #[error("unparseable reply ({message}); raw reply: {raw}")]
    Unparseable { message: String, raw: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("concept extraction failed: {message}")]
    Extraction { message: String, raw: Option<String> },

    #[error("realization failed: {0}")]
    Realization(String),

    #[error("budget exceeded: {0}")]
    Budget(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("precision undefined: {0}")]
    UndefinedPrecision(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures a caller may retry (transport-level problems).
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Retryable(_))
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}
