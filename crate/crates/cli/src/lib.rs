//! Command-line driver: configuration, dispatch to `qfes-core`, CSV and manifest output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{parse_config, ConfigError, Kind, RunConfig, Value};
pub use output::{RunManifest, Table};
pub use run::{execute, run_to_dir, CliError, Experiment};
