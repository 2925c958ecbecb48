use std::path::PathBuf;

/// Failures while decoding one of the binary formats (`GKTL`, `GKTF`, `GKTW`).
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported version {found} (expected {expected})")]
    UnsupportedVersion { found: u16, expected: u16 },
    #[error("truncated stream: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("inconsistent stream: {0}")]
    Inconsistent(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },

    #[error("{what} index {index} out of range (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("im2col would materialize {required} bytes, above the {cap} byte cap")]
    MemoryCap { required: usize, cap: usize },

    #[error("non-finite value while attending query {query}")]
    NonFinite { query: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
