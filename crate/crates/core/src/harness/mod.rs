//! Experiment orchestration: configuration, data loading, warm start,
//! training runs with on-disk artifacts, evaluation and reward ablation.

mod config;
mod data;
mod run;

pub use config::{apply_override, DataConfig, ModelSettings, RunConfig, SamplingSettings, SEED_STREAMS};
pub use data::ExperimentData;
pub use run::{
    prepare, read_curves, run_ablate, run_eval, run_train, train_prepared, EvalReport, Prepared, RunFiles, RunSummary,
    ScoreBlock,
};

use crate::grpo::GrpoError;
use crate::policy::PolicyError;
use crate::roundtrip::RoundtripError;
use crate::synthdata::DataError;
use crate::tensor::checkpoint::CheckpointError;

/// Version string recorded in every run directory.
pub const VERSION: &str = match option_env!("ROUNDTRIP_GIT_DESCRIBE") {
    Some(v) => v,
    None => env!("CARGO_PKG_VERSION"),
};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid config field `{field}`: {message}")]
    Invalid { field: String, message: String },
    #[error("cannot read config: {0}")]
    Io(String),
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Roundtrip(#[from] RoundtripError),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed run artifact {path}: {message}")]
    Artifact { path: String, message: String },
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        HarnessError::Io { path: path.display().to_string(), source }
    }
}
