use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("argument error: {0}")]
    Argument(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unknown environment `{name}` (available: {available})")]
    UnknownEnv { name: String, available: String },
    #[error("environment fault at step {step}: {message}")]
    Env { step: usize, message: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error("training diverged at iteration {iteration}, epoch {epoch}, minibatch {minibatch}: {message}")]
    Diverged {
        iteration: usize,
        epoch: usize,
        minibatch: usize,
        message: String,
        dump: Option<PathBuf>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
