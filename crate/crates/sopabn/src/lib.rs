//! Configuration, experiment orchestration and result files for Shapley-Owen
//! interaction analysis of PABN process models.

pub mod config;
pub mod experiments;
pub mod output;

pub use config::{ConfigError, ExperimentConfig};
