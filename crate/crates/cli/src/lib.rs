//! Experiment runner: configuration files, subcommands and plotting.

pub mod config;
pub mod plot;
pub mod run;

pub use config::{parse_config, ConfigError, ExperimentConfig};
pub use run::{run, Command, RunOutcome};
