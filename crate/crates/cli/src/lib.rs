//! Experiment driver: corpus ingestion, single runs, sweeps, the interval
//! ablation and memory tables, with JSON/CSV/text reporting.

pub mod commands;
pub mod config;
pub mod error;
pub mod memtable;
pub mod output;
pub mod runner;
pub mod sweep;

pub use config::{Overrides, RunConfig};
pub use error::{CliError, CliResult};
