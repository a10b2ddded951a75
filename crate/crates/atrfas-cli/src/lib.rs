//! Library half of the `atrfas` binary: config loading, subcommands and
//! their exit codes.

pub mod commands;
pub mod config;
pub mod error;

pub use error::{CliError, Result};
