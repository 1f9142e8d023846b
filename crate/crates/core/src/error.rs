use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: empty input")]
    EmptyInput { path: PathBuf },

    #[error("{path}: line {line}: expected {expected} fields, found {found}")]
    DimensionMismatch {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("{path}: duplicate id `{id}`")]
    DuplicateId { path: PathBuf, id: String },

    #[error("{path}: missing value at row {row}, column {col}")]
    MissingValue { path: PathBuf, row: usize, col: usize },

    #[error("{path}: non-numeric cell `{value}` at row {row}, column {col}")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{path}: line {line}: invalid position `{value}`")]
    InvalidPosition {
        path: PathBuf,
        line: usize,
        value: String,
    },

    #[error("matrix contains non-finite entries")]
    NonFinite,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("singular value decomposition failed to converge")]
    SvdFailed,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
