use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
}

impl NnError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        NnError::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
