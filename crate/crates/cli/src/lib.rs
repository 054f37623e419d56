//! Experiment runner behind the `blaircomp` binary.

pub mod artifact;
pub mod config;
pub mod experiment;

pub use config::{parse_config, ExperimentConfig, Preset};
pub use experiment::{run_experiment, ExperimentSummary};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration; `field` names the offending key.
    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Core(#[from] blaircomp::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("malformed trace file: {0}")]
    Trace(String),

    #[error(transparent)]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

impl CliError {
    pub fn config(field: &str, message: String) -> Self {
        CliError::Config { field: field.to_string(), message }
    }
}
