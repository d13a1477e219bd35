//! Experiment runner for the cluster-attention adapter: configuration,
//! checkpoints, CSV artifacts, and the subcommand implementations behind
//! the `cladapter` binary.

pub mod checkpoint;
pub mod config;
pub mod csvio;
pub mod error;
pub mod runner;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC};
pub use config::{ExperimentConfig, CONFIG_KEYS, SEED_ENV_VAR};
pub use error::{CliError, Result};
pub use runner::{
    evaluate_checkpoint, export_features, param_count_report, run_experiment, run_grad_check,
    synth_gen, GradCheckReport, RunArtifacts, GRAD_CHECK_STEPS, GRAD_CHECK_TOLERANCE,
};
