//! Batch driver: configuration, studies and their CSV/SVG/VTK outputs.

pub mod commands;
pub mod config;
pub mod output;

pub use commands::{execute, CliError, Command, Outcome};
pub use config::{ConfigError, RunConfig};
