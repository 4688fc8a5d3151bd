use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unknown {kind} `{label}`")]
    Vocabulary { kind: &'static str, label: String },

    #[error("invalid query: {0}")]
    InvalidQuery(String),

    #[error("unsupported query: {0}")]
    UnsupportedQuery(String),

    #[error("entity {0} is not scored")]
    MissingEntity(u32),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value at {0}")]
    NonFinite(String),

    #[error("undefined similarity: zero vector")]
    ZeroVector,

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("empty preference set")]
    EmptyPreferences,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("format error: {0}")]
    Format(String),
}
