//! Experiment runner for the mean-field SGDA solvers: configuration,
//! persistence and the `fcme` subcommands.

pub mod commands;
pub mod config;
pub mod error;
pub mod metrics;
pub mod output;

pub use config::ExperimentConfig;
pub use error::{CliError, CliResult};
