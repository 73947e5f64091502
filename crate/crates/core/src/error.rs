use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Data,
    Numeric,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("degenerate window {index}: pooled std {std:e} is not above {eps:e}")]
    DegenerateWindow { index: usize, std: f64, eps: f64 },

    #[error("zero spectrum in channel {channel}")]
    ZeroSpectrum { channel: usize },

    #[error("degenerate feature: channel {channel} has an all-zero spectrum")]
    DegenerateFeature { channel: usize },

    #[error("baseline rule selects no training windows")]
    EmptyBaseline,

    #[error("insufficient baseline pairs: need at least 2 pairs, got {0}")]
    InsufficientPairs(usize),

    #[error("insufficient baseline: need at least 2 rows, got {0}")]
    InsufficientBaseline(usize),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("invalid structure spec: {0}")]
    Spec(String),

    #[error("simulation diverged: {0}")]
    Simulation(String),

    #[error("non-finite {component} loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        component: &'static str,
    },

    #[error("unknown damage label {0}")]
    UnknownLabel(i64),

    #[error("config error: {0}")]
    Config(String),

    #[error("failed to load {path}: {reason}")]
    Load { path: PathBuf, reason: String },

    #[error("checkpoint version mismatch: file has {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn load(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Load {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) | Error::Spec(_) | Error::Version { .. } => ErrorKind::Config,
            Error::NonFiniteLoss { .. } | Error::Simulation(_) => ErrorKind::Numeric,
            _ => ErrorKind::Data,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Serde(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Serde(e.to_string())
    }
}
