//! Config loading, experiment runs, pretraining, metrics and plots.

pub mod config;
pub mod experiment;
pub mod metrics;
pub mod plot;
pub mod pretrain;

pub use config::{ExperimentId, RunConfig};
pub use experiment::{run_experiment, run_sweep, run_to_dir, Experiment, RunReport};
