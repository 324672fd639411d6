use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CoreError>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("structural error: {0}")]
    Structural(String),

    #[error("hierarchy dimension {dim} exceeds cap {cap}")]
    Size { dim: usize, cap: usize },

    #[error("exponential fit failed: relative residual {residual:.3e} above tolerance {tolerance:.1e}")]
    FitFailure { residual: f64, tolerance: f64 },

    #[error("insufficient statistics: {got} realizations, need at least {need}")]
    InsufficientStatistics { got: usize, need: usize },

    #[error("non-finite amplitude in trajectory with seed {seed} at t = {t}")]
    NumericAbort { seed: u64, t: f64 },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("trajectory store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}
