//! Experiment harness: configuration, the sweep and ablation commands, CSV
//! tables and plots.

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

pub use commands::{run, Command, Report};
pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
