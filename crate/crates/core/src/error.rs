use std::fmt;
use std::io;

use thiserror::Error;

/// Location-carrying syntax error for facts files and rule text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, column: usize, message: impl Into<String>) -> Self {
        Self { line, column, message: message.into() }
    }
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.column > 0 {
            write!(f, "line {}, column {}: {}", self.line, self.column, self.message)
        } else {
            write!(f, "line {}: {}", self.line, self.message)
        }
    }
}

impl std::error::Error for ParseError {}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },

    #[error("unknown string id {0}")]
    UnknownId(u64),

    #[error("planning error: {0}")]
    Planning(String),

    #[error("unknown rule '{0}'")]
    UnknownRule(String),

    #[error("inference did not reach a fixpoint within {0} passes")]
    PassLimit(usize),

    #[error("column length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("{side} input of merge join is not sorted at position {position}")]
    Unsorted { side: &'static str, position: usize },

    #[error("bucket ordinal {ordinal} does not fit in {bits} bits")]
    BucketOverflow { ordinal: u32, bits: u32 },

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
