use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vocabulary error: {0}")]
    Vocabulary(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("cannot parse sequence {text:?} at position {position}: {reason}")]
    Sequence {
        text: String,
        position: usize,
        reason: String,
    },

    #[error("MGF error at line {line} (block {block:?}): {reason}")]
    Mgf {
        line: usize,
        block: String,
        reason: String,
    },

    #[error("spectrum {0:?} has no peaks left after preprocessing")]
    EmptySpectrum(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: [usize; 2],
        right: [usize; 2],
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    NonFiniteLoss { epoch: usize, step: usize, loss: f64 },

    #[error("statistical test undefined: {0}")]
    UndefinedTest(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short category name, used by the command-line front end for exit codes.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Vocabulary(_) | Error::Sequence { .. } => "input",
            Error::Mgf { .. } | Error::EmptySpectrum(_) => "input",
            Error::Domain(_) | Error::Shape { .. } => "domain",
            Error::Config(_) => "config",
            Error::Checkpoint(_) => "checkpoint",
            Error::NonFiniteLoss { .. } => "training",
            Error::UndefinedTest(_) => "statistics",
            Error::Io { .. } | Error::Json(_) => "io",
        }
    }
}
