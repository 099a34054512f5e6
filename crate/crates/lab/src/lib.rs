//! Experiment runner for the dynamical probe laboratory: configuration,
//! stage orchestration, CSV and SVG outputs.

pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod report;
pub mod run;

pub use config::ExperimentConfig;
pub use error::LabError;
pub use report::emit_report;
pub use run::{run_experiment, RunOptions, RunSummary};
