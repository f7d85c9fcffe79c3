use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what}: expected {expected} values, got {actual}")]
    Structural {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("dimensionality mismatch: {0}")]
    Dimension(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("forward model failed: {0}")]
    Forward(#[from] ForwardError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failure of a forward model to produce a response.
#[derive(Debug, Error)]
pub enum ForwardError {
    #[error("could not launch `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },

    #[error("`{command}` exited with {status}; stderr: {stderr}")]
    ExitStatus {
        command: String,
        status: String,
        stderr: String,
    },

    #[error("`{command}` timed out after {seconds} s")]
    Timeout { command: String, seconds: f64 },

    #[error("solver reported failure: {0}")]
    Reported(String),

    #[error("response: expected {expected} values, got {actual}")]
    ShortResponse { expected: usize, actual: usize },

    #[error("bad response file: {0}")]
    BadResponse(String),

    #[error("exchange directory i/o: {0}")]
    Exchange(#[from] std::io::Error),
}
