use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),
    #[error("row error at line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("duplicate txn_id `{0}`")]
    DuplicateTxn(String),
    #[error("invalid configuration `{field}`: {message}")]
    Config { field: String, message: String },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in `{0}`")]
    NonFinite(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("undefined metric: {0}")]
    Undefined(String),
    #[error("meta-path error: {0}")]
    MetaPath(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
