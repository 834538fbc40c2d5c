//! Batch front end for multiscale discriminant saliency.

pub mod config;
pub mod error;
pub mod run;

pub use config::{Geometry, RunConfig};
pub use error::{CliError, CliResult, Exit};
pub use run::{run_eval, run_saliency, run_train, EvalSummary, SaliencySummary, TrainSummary};
