//! Experiment harness: configuration, sweeps, training pipelines and the
//! CSV artifacts behind the `thzcomp` command-line tool.

pub mod config;
pub mod error;
pub mod experiments;
pub mod selftest;
pub mod stats;

pub use config::{ExperimentConfig, SlimChoice};
pub use error::{ExpError, Result};
