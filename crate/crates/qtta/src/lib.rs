//! File IO, configuration, evaluation reports and the command line for
//! `qtta-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod parallel;
pub mod report;

pub use error::{CliError, Result};
