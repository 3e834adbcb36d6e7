//! Command-line front end: run configuration and subcommands.

pub mod commands;
pub mod config;

pub use commands::Context;
pub use config::RunConfig;
