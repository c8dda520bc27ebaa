use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid spectrogram geometry: {0}")]
    InvalidGeometry(String),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("insufficient noise pool: {0}")]
    InsufficientPool(String),
    #[error("contaminated evaluation: {0}")]
    ContaminatedEvaluation(String),
    #[error("corrupt manifest entry {id}: {reason}")]
    CorruptEntry { id: String, reason: String },
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("external scorer failed: {0}")]
    ScorerError(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("wav error on {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },
    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Broad class used by the command line front-end to pick an exit code.
    pub fn is_state_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidState(_) | Error::IncompatibleCheckpoint(_)
        )
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
