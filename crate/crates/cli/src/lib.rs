//! Experiment runner: JSON config in; trace, summary and checkpoint out.

pub mod checkpoint;
pub mod config;
pub mod error;
pub mod runner;

pub use checkpoint::Checkpoint;
pub use config::ExperimentConfig;
pub use error::CliError;
pub use runner::{inspect, resume, run, Overrides, Summary};
