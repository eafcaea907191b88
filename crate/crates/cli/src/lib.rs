//! File formats and commands behind the `mfband` binary.

pub mod bundle;
pub mod commands;
pub mod config;
mod error;
pub mod io;

pub use error::{CliError, Result};
