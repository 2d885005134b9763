use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("implicit damping factor is singular at diagonal entry {index} (value {value})")]
    SingularDamping { index: usize, value: f64 },

    #[error("rollout diverged at step {step}")]
    Divergence { step: usize },

    #[error("training diverged at epoch {epoch}, step {step}")]
    TrainingDiverged { epoch: usize, step: usize },

    #[error("cost is not finite at the initial control sequence")]
    NonFiniteCost,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported {format} version {found} (expected {expected})")]
    Version {
        format: &'static str,
        found: u32,
        expected: u32,
    },

    #[error("malformed {format} file: {reason}")]
    Malformed {
        format: &'static str,
        reason: String,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
