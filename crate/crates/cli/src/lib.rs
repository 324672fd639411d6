//! Command-line front end: configuration, the run verbs and their file formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod table;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, Result};
