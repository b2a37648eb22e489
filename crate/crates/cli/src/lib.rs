//! Experiment runner: reads a flat `key = value` configuration, runs the requested
//! algorithms in the requested modes, and writes convergence curves, the event log
//! and a summary into an output directory.

pub mod config;
pub mod experiment;

pub use config::{ExperimentConfig, ModeChoice};
pub use experiment::{run_experiment, verify_trees, ExperimentReport};
