use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes, sizes or settings that cannot be wired together.
    #[error("configuration error: {0}")]
    Config(String),
    /// Bad user-supplied data (tokens, files, masks, checkpoints).
    #[error("input error: {0}")]
    Input(String),
    /// NaN/Inf in a forward or backward pass.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("internal error: {0}")]
    Internal(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Process exit code used by the command line tool: 1 for input and
    /// configuration problems, 2 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
