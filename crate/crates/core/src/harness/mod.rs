//! Experiment plumbing: config parsing, trace serialization, bound reports,
//! and the run/sweep/validate/bounds entry points the CLI drives.

pub mod config;
pub mod report;
pub mod runner;
pub mod trace;

pub use config::ExperimentConfig;
pub use trace::{MetricsTrace, TraceRow};
