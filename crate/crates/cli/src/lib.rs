//! Support library of the `cwm` command-line tool: CSV datasets, the crab
//! loader, run manifests and the table reproductions.

pub mod commands;
pub mod error;
pub mod io;
pub mod manifest;
pub mod repro;

pub use commands::{run, Cli};
pub use error::{CliError, CliResult};
