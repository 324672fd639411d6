//! Trajectory-count refinement around the forecaster: nested ensemble
//! groups, converged-prefix training, autoregressive continuation and
//! acceptance on the spread of the group predictions.

pub mod config;
pub mod error;
pub mod run;
pub mod source;
pub mod stability;

pub use config::{geometric_groups, grow_groups, PipelineConfig, GROUPS};
pub use error::{PipelineError, Result};
pub use run::{fit_group, run_pipeline, ConvergenceReport, GroupResult, RoundRecord};
pub use source::{damped_cosines, EnsembleSource, GroupData, StoreSource, SyntheticSource};
pub use stability::{assess_prediction_stability, stitch, PredictionEnsemble, Stitched};
