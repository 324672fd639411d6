//! Reverse-mode differentiable building blocks and the branched
//! convolution / LSTM / attention-fusion forecaster built from them.

pub mod checkpoint;
pub mod error;
pub mod forecast;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod params;
pub mod search;
pub mod tensor;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use error::{NnError, Result};
pub use forecast::{forecast, Forecast};
pub use graph::{Graph, Var};
pub use model::{build_model, downsample_geometry, Model, ModelConfig, Readout};
pub use params::ParamStore;
pub use search::{candidates, grid_search, Candidate, SearchOutcome};
pub use tensor::Tensor;
pub use train::{evaluate, fit_linear_skip, train, History, TrainConfig, TrainMode};
