use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// File content does not follow the declared layout (magic, version, sizes, JSON shape).
    #[error("format error: {0}")]
    Format(String),

    /// Content parses but violates an invariant of the domain type.
    #[error("validation error: {0}")]
    Validation(String),

    /// An attention cell holds NaN/inf or leaves [0,1].
    #[error("validation error: value {value} at cell ({category},{row},{col}) is outside [0,1]")]
    InvalidCell {
        category: usize,
        row: usize,
        col: usize,
        value: f32,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("frame mismatch: {0}")]
    FrameMismatch(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used for exit codes and reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Format,
    Validation,
    Io,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Format(_) => ErrorKind::Format,
            Error::Io { .. } => ErrorKind::Io,
            Error::Validation(_)
            | Error::InvalidCell { .. }
            | Error::Shape(_)
            | Error::FrameMismatch(_) => ErrorKind::Validation,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
