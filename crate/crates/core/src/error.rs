use std::path::PathBuf;

/// Errors raised anywhere in the learning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("target error: {0}")]
    Target(String),
    #[error("dataset is empty after cleaning")]
    EmptyDataset,
    #[error("cannot scale value {value} of attribute `{attribute}` to a 64-bit integer")]
    Scaling { attribute: String, value: f64 },
    #[error("split error: {0}")]
    Split(String),
    #[error("fold error: {0}")]
    Fold(String),
    #[error("malformed formula: {0}")]
    Malformed(String),
    #[error("formula parse error: {0}")]
    Parse(String),
    #[error("search budget exhausted before any formula was evaluated")]
    NoIncumbent,
    #[error("usage error: {0}")]
    Usage(String),
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
