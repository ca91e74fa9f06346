use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: malformed JSON at byte offset {offset}: {message}", path.display())]
    Json {
        path: PathBuf,
        offset: usize,
        message: String,
    },

    #[error("{}: cannot decode image: {message}", path.display())]
    Image { path: PathBuf, message: String },

    #[error("annotation {annotation_id}: {message}")]
    Validation { annotation_id: u64, message: String },

    #[error("mask decode: {0}")]
    MaskDecode(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_))
    }
}
