use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid probability table: {0}")]
    InvalidTable(String),

    #[error("search space of {size} sequences exceeds the oracle limit of {limit}")]
    SearchSpaceTooLarge { size: u128, limit: u128 },

    #[error("target length {requested} exceeds model capacity {max}")]
    Capacity { requested: usize, max: usize },

    #[error("non-finite loss at step {step} (sentence {sentence})")]
    NumericalFailure { step: usize, sentence: usize },

    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("unsupported checkpoint format version {0}")]
    UnsupportedVersion(u32),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}
