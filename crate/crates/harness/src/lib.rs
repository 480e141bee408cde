//! Experiment harness for the `mlopt` library: JSON configuration, the
//! elliptic PDE testbed, replicated sweeps with CSV output and SVG plots.

pub mod config;
pub mod error;
pub mod plot;
pub mod report;
pub mod runner;
pub mod sweep;
pub mod testbed;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
pub use sweep::{run_sweep, ExperimentRecord};
pub use testbed::{generate_problem, Testbed};
