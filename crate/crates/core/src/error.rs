//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// File does not start with the `VVOL` magic bytes.
    #[error("bad magic: expected \"VVOL\", found {found:?}")]
    BadMagic { found: [u8; 4] },

    /// Payload shorter than the header promises.
    #[error("truncated payload: expected {expected} bytes, got {got}")]
    TruncatedPayload { expected: usize, got: usize },

    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),

    #[error("unknown kind code {0}")]
    UnknownKind(u8),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    /// A volume or model violates one of its documented invariants.
    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    /// Training diverged or produced a non-finite value.
    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("model file error: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invariant(msg: impl Into<String>) -> Self {
        Error::Invariant(msg.into())
    }

    pub fn dim_mismatch(msg: impl Into<String>) -> Self {
        Error::DimMismatch(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
