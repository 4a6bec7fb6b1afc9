use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error in {path}: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("index error: {0}")]
    Index(String),

    #[error("state error: {0}")]
    State(String),

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("non-finite values at stage `{stage}`")]
    Numeric { stage: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate state {0}: no affiliated counties")]
    DegenerateState(String),

    #[error("invalid scenario: {0}")]
    Scenario(String),

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config parse error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn numeric(stage: impl Into<String>) -> Self {
        Error::Numeric {
            stage: stage.into(),
        }
    }

    /// Coarse category used by the command line front-end to pick an exit code.
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::State(_) | Error::Scenario(_) | Error::Toml(_) => ErrorKind::Config,
            Error::Numeric { .. } | Error::Diverged { .. } => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}
