use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, EldaError>;

#[derive(Debug, Error)]
pub enum EldaError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The long-term exemplar scores (numerically) zero against its own
    /// detector, so exemplar weights cannot be normalized by it.
    #[error("degenerate exemplar: self-score {0:e} is not positive")]
    DegenerateExemplar(f64),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("model format error: {0}")]
    Format(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl EldaError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EldaError::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EldaError::Io {
            path: path.into(),
            source,
        }
    }
}
