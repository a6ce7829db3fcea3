use thiserror::Error;

/// Errors produced by samplers, targets, and the experiment harness.
#[derive(Error, Debug)]
pub enum Error {
    /// A caller passed an argument that violates an operation's contract.
    #[error("invalid input: {0}")]
    Input(String),

    /// An operation was called on state that is not ready for it.
    #[error("invalid state: {0}")]
    State(String),

    /// A chain produced a non-finite quantity. Carries the position at the
    /// time of failure so aborted runs can be diagnosed.
    #[error("numerical failure: {message} at position {position:?}")]
    Numerical { message: String, position: Vec<f64> },

    /// Configuration file problems, reported with the offending field path.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn state(msg: impl Into<String>) -> Self {
        Error::State(msg.into())
    }

    pub fn numerical(msg: impl Into<String>, position: &[f64]) -> Self {
        Error::Numerical {
            message: msg.into(),
            position: position.to_vec(),
        }
    }

    pub fn config(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
