//! Experiment orchestration: configs, multi-seed runs, CSV outputs,
//! robustness sweeps and the hyperparameter grid.

mod config;
mod grid;
mod robust;
mod run;
mod summary;

pub use config::{Algo, ExperimentConfig};
pub use grid::{default_grid, grid_search, log_space, GridPoint, GridResult};
pub use robust::{collect_states, eval_robust, lipschitz_probe, robust_csv, RobustRow};
pub use run::{run_training, train_seed, train_seeds, TrainingReport};
pub use summary::{
    aggregate, aggregate_csv, parse_records, percentile_at, percentile_csv, percentile_summary, records_csv,
    summarize, AggregateRow, Summary, RECORD_HEADER,
};

use std::path::{Path, PathBuf};

use crate::ddpg::DdpgError;
use crate::envs::EnvError;
use crate::policy::PolicyError;
use crate::smoothreg::SmoothRegError;
use crate::trpo::TrpoError;

/// One evaluation checkpoint of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    pub iter: usize,
    /// Cumulative environment steps used for training.
    pub steps: usize,
    pub seed: u64,
    pub mean_return: f64,
    pub std_return: f64,
    /// Mean KL between consecutive policies (zero for DDPG).
    pub mean_kl: f64,
    pub reg_value: f64,
    /// Mean divergence reached by the perturbation search.
    pub adv_div: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: malformed value for `{key}`: {reason}")]
    Malformed { line: usize, key: String, reason: String },
    #[error("missing required key `{0}`")]
    MissingKey(&'static str),
    #[error("{0}")]
    UnknownAlgorithm(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed CSV {what}: {reason}")]
    Csv { what: String, reason: String },
    #[error("percentiles need at least 2 returns, got {0}")]
    TooFewSeeds(usize),
    #[error("every seed failed: {0}")]
    AllSeedsFailed(String),
    #[error("policy expects state dimension {policy}, environment has {env}")]
    DimensionMismatch { policy: usize, env: usize },
    #[error(transparent)]
    Trpo(#[from] TrpoError),
    #[error(transparent)]
    Ddpg(#[from] DdpgError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    SmoothReg(#[from] SmoothRegError),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}
