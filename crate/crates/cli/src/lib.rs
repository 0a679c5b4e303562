//! Experiment harness around `fedeba-core`: configuration files, the `run`,
//! `oracle` and `partition` commands, and their on-disk formats.

pub mod commands;
pub mod config;
pub mod format;

pub use commands::{cmd_oracle, cmd_partition, cmd_run, resolve_output_dir, OracleRequest};
pub use config::{ConfigError, DatasetSpec, ExperimentConfig};
