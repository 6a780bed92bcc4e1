use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("empty data")]
    EmptyData,
    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedData {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}, column {col}: cannot parse {field:?}")]
    ParseError {
        line: usize,
        col: usize,
        field: String,
    },
    #[error("split leaves an empty side (n={n}, train_frac={train_frac})")]
    DegenerateSplit { n: usize, train_frac: f64 },
    #[error("class {class} has {available} training instances, {requested} requested")]
    InsufficientLabels {
        class: usize,
        available: usize,
        requested: usize,
    },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("file format error: {0}")]
    FormatError(String),
    #[error("file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("negative or non-finite distance {0}")]
    InvalidDistance(f64),
    #[error("k={k} exceeds row length {m}")]
    KTooLarge { k: usize, m: usize },
    #[error("shape error: {0}")]
    ShapeError(String),
    #[error("non-finite activation in {0}")]
    NumericalDivergence(&'static str),
    #[error("no labeled nodes to supervise")]
    NoSupervision,
    #[error("all paired differences are zero")]
    DegenerateTest,
    #[error("matrix kind {found} does not match method {method} (expects {expected})")]
    KindMismatch {
        method: String,
        expected: String,
        found: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
