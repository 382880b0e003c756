//! Library side of the `quadgp` command-line tool.

pub mod commands;
pub mod compare;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::CliError;
