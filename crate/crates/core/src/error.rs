use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("budget mismatch: target probabilities sum to {sum}, budget is {budget}")]
    BudgetMismatch { sum: f64, budget: usize },

    #[error("value {value} out of range for {what}")]
    OutOfRange { what: &'static str, value: f64 },

    #[error("dimension mismatch: expected {expected} {what}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("degenerate weight for unit {unit}: probability {p} on the realized branch")]
    DegenerateWeight { unit: usize, p: f64 },

    #[error("{arm} arm is empty")]
    EmptyArm { arm: &'static str },

    #[error("confidence level alpha = {0} must lie in (0, 1)")]
    InvalidLevel(f64),

    #[error("no draw met the budget after {tries} Bernoulli tries")]
    RejectionLimitExceeded { tries: usize },

    #[error("covariate covariance matrix is singular even after ridge regularization")]
    SingularCovariance,

    #[error("budget floor(sum p) is zero; nothing can be treated")]
    DegenerateBudget,

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{path}: parse error at row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: schema error: {message}")]
    Schema { path: PathBuf, message: String },

    #[error("n={n}, scenario {scenario}, method {method}, replication {replication}: {source}")]
    Cell {
        n: usize,
        scenario: usize,
        method: String,
        replication: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad inputs rather than by a failing computation.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::BudgetMismatch { .. }
            | Error::OutOfRange { .. }
            | Error::DimensionMismatch { .. }
            | Error::InvalidLevel(_)
            | Error::DegenerateBudget
            | Error::InvalidParams(_)
            | Error::InvalidConfig(_)
            | Error::Parse { .. }
            | Error::Schema { .. } => true,
            Error::Cell { source, .. } => source.is_validation(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
