//! Experiment drivers for the `tlsh` command-line tool.

pub mod config;
pub mod error;
pub mod experiments;
pub mod oracle;

pub use config::{ExperimentConfig, LshParams, SweepParam};
pub use error::{CliError, Result};
