//! Experiment harness: configuration, training runs, sweeps and metrics.

pub mod config;
pub mod data;
pub mod error;
pub mod run;
pub mod sweep;

pub use config::{load, parse_flags, Assignment, ExperimentConfig};
pub use error::{HarnessError, Result};
pub use run::{run_experiment, RunOptions, RunSummary};
pub use sweep::{run_sweep, SweepAxis, SweepPlan, SweepResult};

/// Environment variable naming the directory runs are created under.
pub const RUN_ROOT_ENV: &str = "MT_RUN_ROOT";
