//! Configuration, file formats and the command line for running
//! disturbance-immune weight-sharing experiments on top of `diws-core`.

pub mod cli;
pub mod config;
pub mod csv_io;
pub mod error;
pub mod experiments;
pub mod record;

pub use error::{HarnessError, Result};
