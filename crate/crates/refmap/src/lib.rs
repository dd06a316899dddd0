//! File formats, scene manifests, run configuration and the subcommands of
//! the `refmap` binary, on top of the pure-math `refmap-core`.

pub mod builtin;
pub mod cli;
pub mod commands;
pub mod config;
pub mod error;
pub mod exec;
pub mod formats;
pub mod manifest;
pub mod tables;

pub use error::{CliError, Result};
