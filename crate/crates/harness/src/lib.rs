//! Experiment runner for robust-irl: noise sweeps, penetration success rates
//! and the Gibbs convergence-threshold study, written as CSV with a config
//! hash header and plotted as SVG.

pub mod config;
pub mod error;
pub mod plots;
pub mod runner;
pub mod stats;

pub use config::{ExperimentConfig, Method};
pub use error::{HarnessError, Result};
pub use runner::{ResultRow, Study};
