use std::io;

use stochdyn_core::CoreError;
use stochdyn_nn::NnError;
use stochdyn_pipeline::PipelineError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Pipeline(#[from] PipelineError),

    #[error(transparent)]
    Io(#[from] io::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_NOT_CONVERGED: i32 = 4;

fn core_code(e: &CoreError) -> i32 {
    match e {
        CoreError::NumericAbort { .. } | CoreError::FitFailure { .. } => EXIT_NUMERIC,
        _ => EXIT_INPUT,
    }
}

fn nn_code(e: &NnError) -> i32 {
    match e {
        NnError::Divergence { .. } | NnError::SearchFailure(_) => EXIT_NUMERIC,
        NnError::Core(c) => core_code(c),
        _ => EXIT_INPUT,
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Io(_) => EXIT_INPUT,
            CliError::Core(e) => core_code(e),
            CliError::Nn(e) => nn_code(e),
            CliError::Pipeline(e) => match e {
                PipelineError::Config(_) | PipelineError::Structural(_) => EXIT_INPUT,
                PipelineError::NoPrediction { .. } => EXIT_NOT_CONVERGED,
                PipelineError::Core(c) => core_code(c),
                PipelineError::Nn(n) => nn_code(n),
            },
        }
    }
}
