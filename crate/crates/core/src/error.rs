use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Input(String),

    #[error("size mismatch: {0}")]
    Size(String),

    #[error("malformed tree: {0}")]
    Structure(String),

    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0} not found")]
    NotFound(String),

    #[error("config: {0}")]
    Config(String),

    #[error("optimizer failed at first iteration: {0}")]
    Optimizer(String),

    #[error("model file: {0}")]
    Model(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn input<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Input(msg.into()))
}

pub(crate) fn size<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Size(msg.into()))
}
