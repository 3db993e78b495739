use thiserror::Error;

/// Errors produced by the personalisation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates one of its invariants.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// A call argument is out of range or inconsistent with another argument.
    #[error("invalid argument: {0}")]
    Argument(String),
    /// An operation was attempted in a state that does not permit it.
    #[error("invalid state: {0}")]
    State(String),
    /// Input data is unusable (empty corpus, degenerate labels, ...).
    #[error("data error: {0}")]
    Data(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn arg_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
