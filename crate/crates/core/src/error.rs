use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("ill-conditioned seasonal design: {0}")]
    IllConditioned(String),

    #[error("too few retained draws: {got} (need at least {need})")]
    TooFewDraws { got: usize, need: usize },

    #[error("dense dataset spans {got} distinct days, below the floor of {floor}")]
    InsufficientDays { got: usize, floor: usize },

    #[error("refusing to overwrite existing file {0} (pass force to replace it)")]
    WouldOverwrite(PathBuf),

    #[error("corrupt file {path} at byte {offset}: {message}")]
    Corrupt {
        path: PathBuf,
        offset: u64,
        message: String,
    },

    #[error("row {row} of {path} violates an invariant: {message}")]
    RowInvariant {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
