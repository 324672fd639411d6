//! Stochastic pseudo-Fock propagation of open quantum systems: bath
//! description and colored noise, hierarchy operators, RK4 trajectories,
//! ensemble statistics and the data preparation that feeds the forecaster.

pub mod bath;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod hierarchy;
pub mod models;
pub mod propagator;

pub use error::{CoreError, Result};
pub use grid::TimeGrid;
