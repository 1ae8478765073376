//! Run configuration, run-directory persistence, and the pipeline behind the
//! `sbice` command.

pub mod commands;
pub mod config;
pub mod error;
pub mod rundir;
pub mod worker;

pub use commands::{cmd_evaluate, cmd_generate, cmd_infer, cmd_report, cmd_run, cmd_simulate, read_metrics, Metrics};
pub use config::RunConfig;
pub use error::{CliError, Result};
pub use rundir::Regime;
