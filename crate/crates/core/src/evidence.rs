//! Per-model evidence on the `-2 log` scale.
//!
//! Two scores are provided, each equal to `-2 log f(γ | y)` up to a constant
//! shared by every model:
//!
//! * **Laplace**: `-2 loglik(β̃) + φ(γ) - 2 log f(γ)`, with the posterior mode
//!   `β̃` under the unit-information prior and
//!   `φ(γ) = β̃'X'Xβ̃ / 4n + d log 4n + log(|Ψ⁻¹| / |X'X|)`.
//! * **Cost-adjusted BIC**: `-2 loglik(β̂) + (1 + C_γ / c₀) log n`. With equal
//!   costs `1 + C_γ / c₀ = d_γ` and this is classical BIC.
//!
//! Differences of scores give `-2 log PO`. Models whose fit is undefined
//! (singular `X'X`, divergent MLE) are excluded and carry zero posterior mass.

use std::fmt;
use std::sync::Arc;

use dashmap::DashMap;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{logistic, FitKind, FitResult, ModelProblem};
use crate::model_space::ModelIndicator;
use crate::priors::{log_model_prior, CostPriorSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Laplace,
    Bic,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Laplace => "laplace",
            Method::Bic => "bic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelScore {
    pub model: ModelIndicator,
    pub method: Method,
    /// At the posterior mode (laplace) or the MLE (bic).
    pub log_likelihood: f64,
    /// Laplace only.
    pub phi: Option<f64>,
    pub log_model_prior: f64,
    /// `-2 x` approximate log posterior, up to a model-independent constant.
    pub score: f64,
    /// Laplace approximation of `log f(y | γ)` (laplace only).
    pub log_marginal: Option<f64>,
    pub cost: f64,
    pub dimension: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    RankDeficient,
    MleDiverged,
    ModeNotConverged,
}

impl fmt::Display for Exclusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Exclusion::RankDeficient => "rank deficient",
            Exclusion::MleDiverged => "MLE diverged",
            Exclusion::ModeNotConverged => "posterior mode did not converge",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Evaluation {
    Scored(ModelScore),
    Excluded {
        model: ModelIndicator,
        reason: Exclusion,
    },
}

impl Evaluation {
    pub fn model(&self) -> ModelIndicator {
        match self {
            Evaluation::Scored(s) => s.model,
            Evaluation::Excluded { model, .. } => *model,
        }
    }

    pub fn scored(&self) -> Option<&ModelScore> {
        match self {
            Evaluation::Scored(s) => Some(s),
            Evaluation::Excluded { .. } => None,
        }
    }

    /// `-score / 2`, or `-inf` for excluded models.
    pub fn log_weight(&self) -> f64 {
        match self {
            Evaluation::Scored(s) => -0.5 * s.score,
            Evaluation::Excluded { .. } => f64::NEG_INFINITY,
        }
    }
}

/// Posterior odds kept in log space. Exclusions are distinct from overflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PosteriorOdds {
    Finite(f64),
    /// Numerator model excluded.
    Zero,
    /// Denominator model excluded.
    Infinite,
    /// Both excluded.
    Undefined,
}

impl PosteriorOdds {
    pub fn log(&self) -> f64 {
        match *self {
            PosteriorOdds::Finite(v) => v,
            PosteriorOdds::Zero => f64::NEG_INFINITY,
            PosteriorOdds::Infinite => f64::INFINITY,
            PosteriorOdds::Undefined => f64::NAN,
        }
    }

    /// Exponentiated odds; may overflow to `inf` for `Finite` values.
    pub fn value(&self) -> f64 {
        self.log().exp()
    }

    pub fn between(k: &Evaluation, l: &Evaluation) -> Self {
        match (k, l) {
            (Evaluation::Scored(a), Evaluation::Scored(b)) => {
                PosteriorOdds::Finite(-0.5 * (a.score - b.score))
            }
            (Evaluation::Excluded { .. }, Evaluation::Scored(_)) => PosteriorOdds::Zero,
            (Evaluation::Scored(_), Evaluation::Excluded { .. }) => PosteriorOdds::Infinite,
            _ => PosteriorOdds::Undefined,
        }
    }
}

/// Posterior-mode summary kept for samplers that need proposal scales.
#[derive(Debug, Clone)]
pub struct ModeSummary {
    pub fit: FitResult,
    /// `Ψ_γ`, the inverse of the negative Hessian at the mode.
    pub psi: DMatrix<f64>,
    /// Lower Cholesky factor of `Ψ_γ`.
    pub psi_chol: DMatrix<f64>,
    /// `log |X_γ'X_γ|`.
    pub gram_log_det: f64,
    pub gram: DMatrix<f64>,
}

fn require_mode(fit: &FitResult) -> Result<()> {
    if fit.kind != FitKind::PosteriorMode || !fit.converged {
        return Err(Error::NotConverged {
            model: fit.model.to_string(),
        });
    }
    Ok(())
}

/// `Ψ_γ⁻¹ = X' diag{exp(η)/(1+exp(η))² + 1/4n} X` at the fitted mode.
pub fn psi_matrix(model: &ModelIndicator, fit: &FitResult, data: &Dataset) -> Result<DMatrix<f64>> {
    require_mode(fit)?;
    let x = crate::glm::design(model, data);
    if x.ncols() != fit.beta.len() {
        return Err(Error::DimensionMismatch {
            expected: x.ncols(),
            got: fit.beta.len(),
        });
    }
    Ok(psi_inverse(&x, &fit.beta, data.n()))
}

fn psi_inverse(x: &DMatrix<f64>, beta: &DVector<f64>, n: usize) -> DMatrix<f64> {
    let eta = x * beta;
    let ridge = 1.0 / (4.0 * n as f64);
    let weights = eta.map(|e| {
        let p = logistic(e);
        p * (1.0 - p) + ridge
    });
    let d = x.ncols();
    let mut out = DMatrix::zeros(d, d);
    for a in 0..d {
        for b in 0..=a {
            let v: f64 = (0..x.nrows())
                .map(|i| x[(i, a)] * weights[i] * x[(i, b)])
                .sum();
            out[(a, b)] = v;
            out[(b, a)] = v;
        }
    }
    out
}

/// `log |A|` for symmetric positive definite `A`.
pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = a
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?;
    Ok(2.0
        * chol
            .l_dirty()
            .diagonal()
            .iter()
            .map(|v| v.ln())
            .sum::<f64>())
}

/// `φ(γ)` at a converged posterior mode.
pub fn phi(model: &ModelIndicator, fit: &FitResult, data: &Dataset) -> Result<f64> {
    let psi_inv = psi_matrix(model, fit, data)?;
    let x = crate::glm::design(model, data);
    let gram = x.tr_mul(&x);
    let gram_log_det = crate::glm::GramFactor::new(model, gram.clone())?.log_det;
    phi_from_parts(&fit.beta, &gram, gram_log_det, &psi_inv, data.n())
}

fn phi_from_parts(
    beta: &DVector<f64>,
    gram: &DMatrix<f64>,
    gram_log_det: f64,
    psi_inv: &DMatrix<f64>,
    n: usize,
) -> Result<f64> {
    let four_n = 4.0 * n as f64;
    let d = beta.len() as f64;
    let quad = beta.dot(&(gram * beta));
    Ok(quad / four_n + d * four_n.ln() + log_det_spd(psi_inv)? - gram_log_det)
}

fn exclusion_for(err: &Error) -> Option<Exclusion> {
    match err {
        Error::RankDeficient { .. } => Some(Exclusion::RankDeficient),
        _ => None,
    }
}

fn laplace(
    model: &ModelIndicator,
    data: &Dataset,
    spec: &CostPriorSpec,
) -> Result<(Evaluation, Option<ModeSummary>)> {
    let problem = match ModelProblem::new(model, data) {
        Ok(p) => p,
        Err(e) => {
            return match exclusion_for(&e) {
                Some(reason) => Ok((
                    Evaluation::Excluded {
                        model: *model,
                        reason,
                    },
                    None,
                )),
                None => Err(e),
            }
        }
    };
    let fit = problem.fit(FitKind::PosteriorMode, None);
    if !fit.converged {
        log::warn!("excluding {model}: posterior mode did not converge");
        return Ok((
            Evaluation::Excluded {
                model: *model,
                reason: Exclusion::ModeNotConverged,
            },
            None,
        ));
    }
    let psi_inv = psi_inverse(&problem.x, &fit.beta, data.n());
    let phi = phi_from_parts(
        &fit.beta,
        &problem.gram.gram,
        problem.gram.log_det,
        &psi_inv,
        data.n(),
    )?;
    let log_likelihood = problem.log_likelihood(&fit.beta);
    let log_prior = log_model_prior(model, spec);
    let score = -2.0 * log_likelihood + phi - 2.0 * log_prior;

    let chol = psi_inv
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("Ψ⁻¹ of {model} is not positive definite")))?;
    let psi = chol.inverse();
    let psi_chol = psi
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("Ψ of {model} is not positive definite")))?
        .l();
    let summary = ModeSummary {
        psi,
        psi_chol,
        gram_log_det: problem.gram.log_det,
        gram: problem.gram.gram.clone(),
        fit,
    };
    let evaluation = Evaluation::Scored(ModelScore {
        model: *model,
        method: Method::Laplace,
        log_likelihood,
        phi: Some(phi),
        log_model_prior: log_prior,
        score,
        log_marginal: Some(log_likelihood - 0.5 * phi),
        cost: model.total_cost(spec.costs()),
        dimension: model.dimension(),
    });
    Ok((evaluation, Some(summary)))
}

fn bic(model: &ModelIndicator, data: &Dataset, spec: &CostPriorSpec) -> Result<Evaluation> {
    let problem = match ModelProblem::new(model, data) {
        Ok(p) => p,
        Err(e) => {
            return match exclusion_for(&e) {
                Some(reason) => Ok(Evaluation::Excluded {
                    model: *model,
                    reason,
                }),
                None => Err(e),
            }
        }
    };
    let fit = problem.fit(FitKind::Mle, None);
    if !fit.converged {
        log::warn!("excluding {model}: maximum likelihood estimate diverged");
        return Ok(Evaluation::Excluded {
            model: *model,
            reason: Exclusion::MleDiverged,
        });
    }
    let log_likelihood = fit.objective;
    let score = -2.0 * log_likelihood + (1.0 + spec.scaled_cost(model)) * spec.log_n();
    Ok(Evaluation::Scored(ModelScore {
        model: *model,
        method: Method::Bic,
        log_likelihood,
        phi: None,
        log_model_prior: log_model_prior(model, spec),
        score,
        log_marginal: None,
        cost: model.total_cost(spec.costs()),
        dimension: model.dimension(),
    }))
}

fn check_shapes(model: &ModelIndicator, data: &Dataset, spec: &CostPriorSpec) -> Result<()> {
    if model.p() != data.p() || spec.p() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: data.p(),
            got: if model.p() != data.p() {
                model.p()
            } else {
                spec.p()
            },
        });
    }
    if spec.n() != data.n() {
        return Err(Error::InvalidPrior(format!(
            "prior sample size {} does not match dataset n = {}",
            spec.n(),
            data.n()
        )));
    }
    Ok(())
}

/// Scores a single model without caching.
pub fn score(
    model: &ModelIndicator,
    data: &Dataset,
    spec: &CostPriorSpec,
    method: Method,
) -> Result<Evaluation> {
    check_shapes(model, data, spec)?;
    match method {
        Method::Laplace => Ok(laplace(model, data, spec)?.0),
        Method::Bic => bic(model, data, spec),
    }
}

pub fn posterior_odds(
    k: &ModelIndicator,
    l: &ModelIndicator,
    data: &Dataset,
    spec: &CostPriorSpec,
    method: Method,
) -> Result<PosteriorOdds> {
    let a = score(k, data, spec, method)?;
    let b = score(l, data, spec, method)?;
    Ok(PosteriorOdds::between(&a, &b))
}

/// Scoring front-end bound to one dataset and prior, with a concurrent memo cache.
///
/// Cached values are pure functions of `(m(γ), method)`, so concurrent inserts of the
/// same key are idempotent.
pub struct Evaluator<'a> {
    data: &'a Dataset,
    spec: &'a CostPriorSpec,
    scores: DashMap<(u128, Method), Arc<Evaluation>>,
    modes: DashMap<u128, Option<Arc<ModeSummary>>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(data: &'a Dataset, spec: &'a CostPriorSpec) -> Result<Self> {
        check_shapes(&ModelIndicator::empty(data.p()), data, spec)?;
        Ok(Evaluator {
            data,
            spec,
            scores: DashMap::new(),
            modes: DashMap::new(),
        })
    }

    pub fn data(&self) -> &'a Dataset {
        self.data
    }

    pub fn spec(&self) -> &'a CostPriorSpec {
        self.spec
    }

    pub fn evaluate(&self, model: &ModelIndicator, method: Method) -> Result<Arc<Evaluation>> {
        let key = (model.encoding(), method);
        if let Some(hit) = self.scores.get(&key) {
            return Ok(hit.clone());
        }
        let value = match method {
            Method::Laplace => {
                let (evaluation, summary) = laplace(model, self.data, self.spec)?;
                self.modes
                    .entry(model.encoding())
                    .or_insert_with(|| summary.map(Arc::new));
                Arc::new(evaluation)
            }
            Method::Bic => Arc::new(bic(model, self.data, self.spec)?),
        };
        Ok(self.scores.entry(key).or_insert(value).clone())
    }

    /// Posterior-mode summary of `model`, or `None` if the model is excluded.
    pub fn mode(&self, model: &ModelIndicator) -> Result<Option<Arc<ModeSummary>>> {
        if let Some(hit) = self.modes.get(&model.encoding()) {
            return Ok(hit.clone());
        }
        self.evaluate(model, Method::Laplace)?;
        Ok(self
            .modes
            .get(&model.encoding())
            .map(|v| v.clone())
            .unwrap_or(None))
    }

    pub fn odds(
        &self,
        k: &ModelIndicator,
        l: &ModelIndicator,
        method: Method,
    ) -> Result<PosteriorOdds> {
        Ok(PosteriorOdds::between(
            &*self.evaluate(k, method)?,
            &*self.evaluate(l, method)?,
        ))
    }

    pub fn cached_scores(&self) -> usize {
        self.scores.len()
    }
}
