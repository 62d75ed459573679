//! Configuration, persistence and studies for the `qbcmr` command-line tool.

pub mod config;
pub mod error;
pub mod output;
pub mod studies;

pub use config::{load_config, parse_config, ExperimentConfig, Study};
pub use error::{HarnessError, Result};
