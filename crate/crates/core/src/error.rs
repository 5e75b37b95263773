use std::io;

use thiserror::Error;

/// Errors raised by codebook construction, assignment and training.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("capacity: {0}")]
    Capacity(String),

    #[error("token {token} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { token: usize, vocab_size: usize },

    #[error("data: {0}")]
    Data(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Errors raised while decoding on-disk artifacts. Each malformation has its
/// own variant so callers and tests can tell them apart.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("unknown dtype tag {0}")]
    UnknownDtype(u8),

    #[error("truncated: need {expected} bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("{0} trailing bytes after payload")]
    TrailingBytes(u64),

    #[error("non-zero reserved header bytes")]
    ReservedBytes,

    #[error("non-finite value at element {0}")]
    NonFinite(usize),

    #[error("invalid header: {0}")]
    Header(String),

    #[error("inconsistent codebook: {0}")]
    Validation(String),

    #[error("duplicate token {token:?} on line {line}")]
    DuplicateToken { token: String, line: usize },

    #[error("invalid UTF-8 on line {0}")]
    InvalidUtf8(usize),

    #[error("line {line}: {message}")]
    Text { line: usize, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
