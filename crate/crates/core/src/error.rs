//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("layer `{0}` is not quantizable")]
    NotQuantizable(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("non-finite Hessian-vector product for probe {probe}")]
    NonFiniteProbe { probe: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("latency table is missing entries for: {0}")]
    MissingLatency(String),

    #[error("infeasible instance: {0}")]
    Infeasible(crate::planner::InfeasibleReport),

    #[error("search space too large: {size} plans exceeds the {limit} brute-force guard")]
    SearchSpaceTooLarge { size: f64, limit: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("toml error: {0}")]
    Toml(#[from] toml::de::Error),
}

impl Error {
    pub(crate) fn shape(context: &str, expected: impl ToString, actual: impl ToString) -> Self {
        Error::ShapeMismatch {
            context: context.to_string(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
