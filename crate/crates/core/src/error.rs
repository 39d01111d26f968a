use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input is empty or whitespace-only")]
    EmptyInput,
    #[error("input is not valid UTF-8: {0}")]
    Encoding(#[from] std::str::Utf8Error),
    #[error("the document root cannot be decomposed")]
    RootDecompose,
    #[error("degenerate training data: {0}")]
    DegenerateData(String),
    #[error("embedding corpus is empty")]
    EmptyCorpus,
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("backward called without a cached train-mode forward pass")]
    StaleCache,
    #[error("no text node in the block matches the seed pool")]
    NoMatch,
    #[error("no ancestor below the block root holds two text fields")]
    RowNotFound,
    #[error("block path {0:?} does not resolve to an element")]
    Path(Vec<usize>),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error("format error in {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("embedding table digest {found} does not match checkpoint digest {expected}")]
    EmbeddingMismatch { expected: String, found: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Format { what, reason: reason.into() }
    }
}
