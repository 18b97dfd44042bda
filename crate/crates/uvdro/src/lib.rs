//! Experiment harness for robust training over unmeasured variables:
//! configuration, data loading, sweeps, ablations and reports.
//!
//! The numerical work lives in `uvdro-core`; this crate adds files, the
//! command line and everything else that needs an operating system.

pub mod config;
pub mod error;
pub mod harness;
pub mod io;
pub mod report;

pub use config::{ExperimentConfig, Task, UvSource};
pub use error::{Error, Result};
pub use harness::{run_experiment, run_shuffle_ablation, Ablation, Outcome};
pub use report::{Format, RunRecord};
pub use uvdro_core as core;
