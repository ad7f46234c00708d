use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("dimension mismatch: {left_h}x{left_w} vs {right_h}x{right_w}")]
    DimensionMismatch {
        left_h: usize,
        left_w: usize,
        right_h: usize,
        right_w: usize,
    },

    #[error("patch out of bounds: ({row},{col}) size {size} in {height}x{width} image")]
    OutOfBounds {
        row: usize,
        col: usize,
        size: usize,
        height: usize,
        width: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("zero variance")]
    ZeroVariance,

    #[error("empty input: {0}")]
    Empty(String),

    #[error("header error in {path}: {msg}")]
    Header { path: PathBuf, msg: String },

    #[error("length mismatch in {path}: expected {expected} bytes, found {found}")]
    LengthMismatch {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value in {path} at index {index}")]
    NonFinite { path: PathBuf, index: usize },

    #[error("manifest parse error at line {line}: {msg}")]
    ManifestParse { line: usize, msg: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
