use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: {message}", file.display())]
    Ingest {
        file: PathBuf,
        line: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("lookup error: {0}")]
    Lookup(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("training diverged at epoch {epoch}: {message}")]
    Divergence { epoch: usize, message: String },

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("checkpoint mismatch: {0}")]
    Mismatch(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable name of the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Ingest { .. } => "ingest",
            Error::Config(_) => "config",
            Error::Lookup(_) => "lookup",
            Error::Precondition(_) => "precondition",
            Error::Contract(_) => "contract",
            Error::Divergence { .. } => "divergence",
            Error::Format(_) => "format",
            Error::Mismatch(_) => "mismatch",
            Error::Evaluation(_) => "evaluation",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
