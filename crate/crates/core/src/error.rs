use std::path::PathBuf;

/// Errors raised by the library and the command-line harness.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("entry {index} is negative ({value})")]
    NegativeEntry { index: usize, value: f64 },

    #[error("{what}: entry {index} must be strictly positive, got {value}")]
    NonPositive {
        what: &'static str,
        index: usize,
        value: f64,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("agent {agent} has no reachable utility (zero past utility and no item with positive value)")]
    UnreachableAgent { agent: usize },

    #[error("agent `{name}`: {source}")]
    Agent {
        name: String,
        #[source]
        source: Box<Error>,
    },

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("no rows")]
    NoRows,

    #[error("row {row}: {message}")]
    BadRow { row: usize, message: String },

    #[error("general-position perturbation failed after {0} attempts")]
    RetriesExhausted(usize),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
