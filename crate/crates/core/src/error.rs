use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dictionary hash mismatch: stream expects {expected}, got {found}")]
    HashMismatch { expected: String, found: String },

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("truncated stream")]
    Truncated,

    #[error("invalid set structure: {0}")]
    InvalidSet(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        Error::Malformed(msg.into())
    }

    /// True for failures caused by corrupt or mismatched data rather than
    /// bad arguments or I/O.
    pub fn is_integrity(&self) -> bool {
        matches!(
            self,
            Error::HashMismatch { .. }
                | Error::Checksum { .. }
                | Error::Malformed(_)
                | Error::Truncated
                | Error::InvalidSet(_)
        )
    }
}
