//! Experiment harness for the mechforge exchange laboratory: configuration,
//! run manifests, CSV outputs, the full study and the command-line interface.

pub mod cli;
pub mod config;
pub mod error;
pub mod output;
pub mod study;

pub use config::Config;
pub use error::CliError;
