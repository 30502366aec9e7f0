use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A metric has no defined value on the given input (e.g. no comparable pairs).
    #[error("undefined: {0}")]
    Undefined(String),

    #[error("training failed at epoch {epoch}, batch {batch}: {message}")]
    Training {
        epoch: usize,
        batch: usize,
        message: String,
    },

    #[error("line {line}: {message}")]
    Csv { line: u64, message: String },

    #[error("schema mismatch, offending columns: {}", .0.join(", "))]
    Schema(Vec<String>),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    /// Short stable identifier used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Shape(_) => "shape",
            Error::Undefined(_) => "undefined",
            Error::Training { .. } => "training",
            Error::Csv { .. } => "csv",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line()).unwrap_or(0);
        Error::Csv {
            line,
            message: e.to_string(),
        }
    }
}
