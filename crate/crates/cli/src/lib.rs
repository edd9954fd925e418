//! Command-line front end: configuration, panel files and report emission.

pub mod commands;
pub mod config;
pub mod error;
pub mod panel_io;

pub use error::{CliError, CliResult};
