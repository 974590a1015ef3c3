//! File formats, experiment configuration, grid runner and reporting on top
//! of `kseg-core`.

pub mod config;
mod error;
pub mod io;
pub mod report;
pub mod runner;

pub use error::{CliError, Result};
