//! Files, run directories, the training driver and the command line built
//! on `nmt-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod extract;
pub mod files;
pub mod pipeline;
pub mod run;
pub mod train;

pub use config::ExperimentConfig;
pub use error::{Error, Result};
