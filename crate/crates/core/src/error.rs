//! Error type shared by every engine module.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("cannot partition {len} items into subsets of size {subset}")]
    Partition { len: usize, subset: usize },

    #[error("channel error: {0}")]
    Channel(String),

    #[error("feature source error: {0}")]
    Source(String),

    #[error("class {class} out of range for {count} classes")]
    InvalidClass { class: u16, count: u16 },

    #[error("unknown class {0}")]
    UnknownClass(u16),

    #[error("insufficient data for {what}: need {needed}, have {available}")]
    InsufficientData {
        what: String,
        needed: usize,
        available: usize,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated file at record {record_index}")]
    Truncation { record_index: u64 },

    #[error("unsupported format version {found} (supported: {supported})")]
    Version { found: u64, supported: u64 },

    #[error("class {label}: {source}")]
    Class {
        label: u16,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub(crate) fn in_class(self, label: u16) -> Self {
        match self {
            e @ Error::Class { .. } => e,
            other => Error::Class {
                label,
                source: Box::new(other),
            },
        }
    }
}
