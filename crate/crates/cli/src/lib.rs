//! Batch front-end for the morse-qsd simulator.

pub mod compare;
pub mod config;
pub mod error;
pub mod manifest;
pub mod runner;
pub mod table1;

pub use config::{parse_config, RunConfig};
pub use error::CliError;
