//! Configured experiments: problem setup, solver loop, ledger and series files.

pub mod config;
pub mod run;

pub use config::{AlgorithmChoice, ExperimentConfig, ProblemSource};
pub use run::{execute, run, run_to_dir, RunOutcome, RunSummary};
