//! IO, file formats, parallel drivers and the command-line front end for
//! `fracaudit-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod io;
pub mod pipeline;

pub use error::{CliError, EXIT_FINDINGS, EXIT_IO, EXIT_OK, EXIT_USAGE};
