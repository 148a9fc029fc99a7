//! Experiment configuration and matrix execution for the simulator CLI.

pub mod config;
pub mod matrix;

pub use config::{validate_config, ExperimentConfig, Violation};
pub use matrix::{enumerate_pairs, run_matrix, MatrixOutput, RunMeta};
