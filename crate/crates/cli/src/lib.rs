//! Command-line driver for training, simulation, bound reports and reproduction runs.

pub mod commands;
pub mod config;
pub mod error;
pub mod reproduce;

pub use config::ExperimentConfig;
pub use error::CliError;
