//! `tcanlab`: experiment runner around `tcan-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod experiment;
pub mod plot;

pub use commands::{run, Cli, Command};
pub use error::{exit, CliError};
