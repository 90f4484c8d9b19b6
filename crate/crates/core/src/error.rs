use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised anywhere in the pipeline.
///
/// [`Error::is_validation`] separates bad user input (malformed files,
/// inconsistent configs) from failures that happen while computing.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}:{line}: malformed line: {message}")]
    MalformedLine {
        file: String,
        line: usize,
        message: String,
    },
    #[error("dangling endpoint: edge on line {line} references unknown node id {id:?}")]
    DanglingEndpoint { line: usize, id: String },
    #[error("duplicate node id {id:?} on line {line}")]
    DuplicateNode { line: usize, id: String },
    #[error("unknown {kind} type name {name:?} on line {line}")]
    UnknownType {
        kind: &'static str,
        name: String,
        line: usize,
    },
    #[error("invalid vector file: {0}")]
    VectorFormat(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("count mismatch: expected {expected} rows, found {found}")]
    CountMismatch { expected: usize, found: usize },
    #[error("non-finite value in row {row}")]
    NonFiniteRow { row: usize },
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },
    #[error("log of non-positive value")]
    LogDomain,
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar([usize; 2]),
    #[error("cannot sample negative: {0}")]
    NegativeSampling(String),
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Validation(String),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    /// True for errors caused by invalid inputs rather than by a failed computation.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Io { .. } | Error::NonFinite { .. } | Error::LogDomain | Error::Shape { .. }
        )
    }
}
