use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value or unknown identifier.
    #[error("configuration error: {0}")]
    Config(String),

    /// Shapes or sizes that cannot be combined.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Two objects that must agree (bank vs stack, checkpoint vs config) do not.
    #[error("consistency error: {0}")]
    Consistency(String),

    /// Input that is well-formed but too small to process.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// A non-finite value appeared during training.
    #[error("training diverged at step {step}: {what}")]
    Divergence { step: usize, what: String },

    /// Malformed file contents.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Divergence { .. } => 3,
            _ => 1,
        }
    }
}
