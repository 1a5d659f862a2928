use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("zero-norm vector in {0}")]
    ZeroNorm(&'static str),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("head kind mismatch: expected {expected}, found {found}")]
    KindMismatch { expected: String, found: String },

    #[error("report mismatch: {0}")]
    ReportMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Load failures for the binary table and checkpoint containers.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u32),
    #[error("truncated file")]
    Truncated,
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("invalid record: {0}")]
    Invalid(String),
    #[error("trailing bytes after last record")]
    Trailing,
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn dataset(msg: impl Into<String>) -> Self {
        Error::Dataset(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, source: FormatError) -> Self {
        Error::Format {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
        if expected == actual {
            Ok(())
        } else {
            Err(Error::DimensionMismatch { expected, actual })
        }
    }
}
