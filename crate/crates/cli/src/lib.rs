//! Batch driver: JSON experiment configs in, CSV and JSON results out.

pub mod config;
pub mod output;
pub mod run;

pub use config::{ExperimentConfig, Overrides};
pub use run::{run, ExperimentReport, Outcome, RunError};
