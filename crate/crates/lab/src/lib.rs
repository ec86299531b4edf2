//! Configuration-driven experiments on top of `nlslab-core`: cached
//! families and kernels, reduced and PDE runs, sweeps, and the acceptance
//! suite.

pub mod acceptance;
pub mod config;
pub mod error;
pub mod runs;
pub mod setup;
pub mod store;

pub use config::{ExperimentConfig, Kind};
pub use error::{LabError, LabResult};
pub use store::Cache;
