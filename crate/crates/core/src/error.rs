//! Crate-wide error type.
//!
//! Everything fallible in this crate returns [`Error`]. The variants are
//! coarse on purpose: callers almost always either bail out with the message
//! or map the error onto a process exit code, so the payload is a
//! human-readable description plus, where it matters (file parsing), the byte
//! offset at which the problem was detected.

use std::fmt;
use std::io;

/// Errors produced by this crate.
#[derive(Debug)]
pub enum Error {
    /// Tensor or vector dimensions do not line up for the requested
    /// operation.
    Shape(String),
    /// An index or length argument is out of range for the object it is
    /// applied to.
    Index(String),
    /// A violated call precondition that is not a pure shape problem
    /// (negative activations, empty inputs, missing dataset cells, ...).
    Precondition(String),
    /// Malformed input file. `offset` is the byte position at which the
    /// problem was detected.
    Format { offset: u64, message: String },
    /// Malformed or inconsistent checkpoint. `field` names the section of
    /// the checkpoint that failed to load.
    Checkpoint { field: &'static str, message: String },
    /// Underlying I/O failure.
    Io(io::Error),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape(msg) => write!(f, "shape mismatch: {msg}"),
            Error::Index(msg) => write!(f, "index out of range: {msg}"),
            Error::Precondition(msg) => write!(f, "precondition violated: {msg}"),
            Error::Format { offset, message } => {
                write!(f, "malformed file at byte {offset}: {message}")
            }
            Error::Checkpoint { field, message } => {
                write!(f, "bad checkpoint ({field}): {message}")
            }
            Error::Io(err) => write!(f, "i/o error: {err}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(err) => Some(err),
            _ => None,
        }
    }
}

impl From<io::Error> for Error {
    fn from(err: io::Error) -> Self {
        Error::Io(err)
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
