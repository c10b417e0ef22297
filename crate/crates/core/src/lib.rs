//! Bayesian variable selection for binary-outcome regression where every
//! candidate predictor carries a data-collection cost.

// `!(x < y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod dataset;
pub mod diagnostics;
pub mod error;
pub mod evidence;
pub mod glm;
pub mod model_space;
pub mod num;
pub mod oracle;
pub mod priors;
pub mod report;
pub mod samplers;

pub use dataset::{load_dataset, synthesize, Dataset, PairCorrelation, SyntheticSpec};
pub use error::{Error, Result};
pub use evidence::{Evaluation, Evaluator, Method, ModelScore, PosteriorOdds};
pub use glm::{FitKind, FitResult};
pub use model_space::ModelIndicator;
pub use oracle::{enumerate_posterior, marginal_inclusion_from_table, PosteriorTable};
pub use priors::{CostPriorSpec, PriorMode};
pub use samplers::{
    marginal_inclusion, run_mc3, run_rjmcmc, two_stage_search, ChainOutput, SamplerConfig,
    SamplerMethod, Scan, StartState,
};
