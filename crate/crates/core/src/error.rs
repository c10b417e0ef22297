use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("row {row}: response value {value:?} is not binary (expected 0 or 1)")]
    NonBinaryResponse { row: usize, value: String },

    #[error("row {row}, column {column:?}: cell {value:?} is not a finite number")]
    NonNumericCell {
        row: usize,
        column: String,
        value: String,
    },

    #[error("response is constant; both outcomes 0 and 1 must be present")]
    ConstantResponse,

    #[error("no cost entry for predictor {0:?}")]
    MissingCost(String),

    #[error("cost entry {0:?} does not match any predictor column")]
    ExtraCost(String),

    #[error("predictor {0:?} has more than one cost entry")]
    DuplicateCost(String),

    #[error("predictor {name:?} has non-positive or non-finite cost {cost}")]
    NonPositiveCost { name: String, cost: f64 },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("correlation matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("variable index {index} out of range 1..={p}")]
    IndexOutOfRange { index: usize, p: usize },

    #[error("model space with p = {p} exceeds the limit of {limit} predictors")]
    TooManyPredictors { p: usize, limit: usize },

    #[error("problem too large: {0}")]
    Guard(String),

    #[error("cannot parse model notation: unknown token {token:?}")]
    Notation { token: String },

    #[error("invalid prior specification: {0}")]
    InvalidPrior(String),

    #[error("model {model} is rank deficient (X'X singular)")]
    RankDeficient { model: String },

    #[error("fit for model {model} did not converge")]
    NotConverged { model: String },

    #[error("invalid sampler configuration: {0}")]
    InvalidSampler(String),

    #[error("sampler aborted: {0}")]
    SamplerAborted(String),

    #[error("no post-burn-in draws available")]
    EmptyChain,

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Notation { .. }
            | Error::InvalidSampler(_)
            | Error::InvalidPrior(_)
            | Error::TooManyPredictors { .. }
            | Error::Guard(_)
            | Error::IndexOutOfRange { .. } => 1,
            Error::RankDeficient { .. }
            | Error::NotConverged { .. }
            | Error::SamplerAborted(_)
            | Error::EmptyChain
            | Error::Numerical(_) => 3,
            _ => 2,
        }
    }
}
