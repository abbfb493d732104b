use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IkcError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("degenerate basis: requested {requested} components but sample rank is {rank}")]
    DegenerateBasis { requested: usize, rank: usize },

    #[error("no data: {0}")]
    NoData(String),

    #[error("non-finite loss at step {step} (batch seed {batch_seed})")]
    NonFinite { step: u64, batch_seed: u64 },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("png {path}: {detail}")]
    Png { path: PathBuf, detail: String },
}

pub type Result<T> = std::result::Result<T, IkcError>;

pub(crate) fn invalid(msg: impl Into<String>) -> IkcError {
    IkcError::InvalidParameter(msg.into())
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> IkcError {
    let path = path.into();
    move |source| IkcError::Io { path, source }
}
