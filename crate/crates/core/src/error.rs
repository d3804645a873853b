use std::path::PathBuf;

use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid environment: {0}")]
    InvalidEnvironment(String),

    #[error("state id {index} out of range (|S| = {num_states})")]
    StateOutOfRange { index: usize, num_states: usize },

    #[error("action id {index} out of range (|A| = {num_actions})")]
    ActionOutOfRange { index: usize, num_actions: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("soft value iteration for goal {goal} did not converge after {iters} iterations (residual {residual:e})")]
    NonConvergence {
        goal: usize,
        iters: usize,
        residual: f64,
    },

    #[error("no policy tables for goal {0}")]
    MissingGoal(usize),

    #[error("distribution has a zero entry at index {index}; not a max-ent policy")]
    ZeroProbability { index: usize },

    #[error("exact distance matrix needs {required} operations, budget is {budget}; use dataset mode")]
    BudgetExceeded { required: u64, budget: u64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    TrainingDiverged { epoch: usize, detail: String },

    #[error("factor {0} does not apply to this environment")]
    FactorNotApplicable(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }
}
