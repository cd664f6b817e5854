//! Experiment plumbing: configuration, datasets, the instrumented training
//! loop, sweeps, checkpoints and run artifacts.

pub mod artifacts;
pub mod checkpoint;
pub mod config;
pub mod data;
mod early_stop;
pub mod sweep;
mod train;

pub use artifacts::{write_failure, write_run, ARTIFACT_FILES};
pub use config::{DatasetKind, LossKind, ModelName, RunConfig, CONFIG_SCHEMA_VERSION};
pub use data::{load_dataset, Dataset};
pub use early_stop::{patience_epochs, EarlyStopping};
pub use sweep::{mlp_grid, sweep, SweepResult, SweepRow};
pub use train::{run_training, EpochRecord, PartialRun, RunFailure, RunOutcome, RunSummary, SUMMARY_SCHEMA_VERSION};
