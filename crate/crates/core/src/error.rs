//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LpnError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty batch")]
    EmptyBatch,

    #[error("non-finite loss at iteration {iteration} (stage {stage}, gamma {gamma:?}, lr {lr})")]
    NonFiniteLoss {
        iteration: usize,
        stage: String,
        gamma: Option<f64>,
        lr: f64,
    },

    #[error("conjugate gradient failed to reach tolerance {tol} after {iterations} iterations (relative residual {residual})")]
    CgFailure {
        tol: f64,
        iterations: usize,
        residual: f64,
    },

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("iterate history was not recorded; enable `record_iterates` in the solver config")]
    IteratesNotRecorded,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LpnError>;
