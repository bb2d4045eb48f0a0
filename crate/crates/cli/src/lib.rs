//! Command-line front end: configuration files, named presets, run
//! directories, and replay.

pub mod config;
pub mod error;
pub mod preset;
pub mod run;

pub use config::{EvalPlan, RunConfig};
pub use error::CliError;
