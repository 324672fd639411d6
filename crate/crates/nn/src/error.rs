use std::io;

use stochdyn_core::CoreError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("structural error: {0}")]
    Structural(String),

    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },

    #[error("grid search failed: {0}")]
    SearchFailure(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Io(#[from] io::Error),
}
