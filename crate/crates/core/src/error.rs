use thiserror::Error;

use crate::engine::wire::WireError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value in dimension {dim}")]
    NumericFault { dim: usize },

    #[error("sample index {index} out of range (n = {n})")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("transport failure: {0}")]
    Transport(String),

    /// A run that stopped early; carries whatever metrics were collected.
    #[error("run aborted at iteration {at}: {source}")]
    Aborted {
        at: u64,
        source: Box<Error>,
        partial: Box<crate::metrics::Metrics>,
    },

    #[error(transparent)]
    Wire(#[from] WireError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by the caller's configuration or input files
    /// rather than by something going wrong during a run.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::DimMismatch { .. }
                | Error::Domain(_)
                | Error::Parse { .. }
                | Error::Json(_)
                | Error::Empty(_)
        )
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch { expected, got });
    }
    Ok(())
}

pub(crate) fn check_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|x| !x.is_finite()) {
        Some(dim) => Err(Error::NumericFault { dim }),
        None => Ok(()),
    }
}
