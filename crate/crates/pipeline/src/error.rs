use stochdyn_core::CoreError;
use stochdyn_nn::NnError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid pipeline configuration: {0}")]
    Config(String),

    #[error("structural error: {0}")]
    Structural(String),

    /// No round produced a complete set of group forecasts.
    #[error("no prediction after {rounds} rounds: {reason}")]
    NoPrediction { rounds: usize, reason: String },

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Nn(#[from] NnError),
}
