use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(#[from] ParseError),
}

/// Failures while decoding one of the binary formats (IDX, PGM, model file).
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported version {0}")]
    Version(u32),

    #[error("truncated input in {section}: needed {needed} bytes, {available} available")]
    Truncated {
        section: String,
        needed: usize,
        available: usize,
    },

    #[error("malformed header: {0}")]
    Header(String),

    #[error("inconsistent extents: {0}")]
    Extent(String),

    #[error("dimension overflow: {0}")]
    Overflow(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
