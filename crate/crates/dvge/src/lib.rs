//! File formats, checkpoints, configuration and experiment orchestration
//! around `dvge-core`.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod credit;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod pool;
pub mod report;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
