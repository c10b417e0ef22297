//! Logistic-regression likelihood, the unit-information coefficient prior
//! `N(0, 4n (X'X)^-1)`, and Newton solvers for the MLE and the posterior mode.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model_space::ModelIndicator;

/// Gradient max-norm below which Newton declares convergence.
pub const GRADIENT_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 50;
pub const MAX_STEP_HALVINGS: usize = 30;
/// `|beta|_inf` beyond which the MLE is declared divergent.
pub const DIVERGENCE_BOUND: f64 = 30.0;
/// Newton step max-norm the MLE must also reach before it counts as converged.
pub const MLE_STEP_TOLERANCE: f64 = 1e-6;

/// Relative Cholesky pivot below which `X'X` is treated as singular.
const RANK_TOLERANCE: f64 = 1e-10;

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn logistic(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(eta))` without overflow.
pub fn log1p_exp(eta: f64) -> f64 {
    if eta > 0.0 {
        eta + (-eta).exp().ln_1p()
    } else {
        eta.exp().ln_1p()
    }
}

/// `log f(y | eta)` for a single Bernoulli observation.
pub fn log_bernoulli(y: f64, eta: f64) -> f64 {
    y * eta - log1p_exp(eta)
}

/// Columns of the design matrix used by `model`, intercept first.
pub fn design(model: &ModelIndicator, data: &Dataset) -> DMatrix<f64> {
    data.x().select_columns(&model.columns())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    Mle,
    PosteriorMode,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub model: ModelIndicator,
    /// Intercept first, then included predictors in index order.
    pub beta: DVector<f64>,
    /// Log-likelihood (MLE) or `h(beta)` = log-likelihood + log-prior (posterior mode).
    pub objective: f64,
    /// Negative Hessian of the objective at `beta`.
    pub neg_hessian: DMatrix<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kind: FitKind,
}

/// Cholesky factor of `X_γ'X_γ` together with its log-determinant.
#[derive(Debug, Clone)]
pub struct GramFactor {
    pub gram: DMatrix<f64>,
    pub chol: Cholesky<f64, Dyn>,
    pub log_det: f64,
}

impl GramFactor {
    pub fn new(model: &ModelIndicator, gram: DMatrix<f64>) -> Result<Self> {
        let scale = gram.diagonal().max();
        let chol = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::RankDeficient {
                model: model.to_string(),
            })?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for k in 0..gram.nrows() {
            let pivot = l[(k, k)] * l[(k, k)];
            if !(pivot > RANK_TOLERANCE * scale) {
                return Err(Error::RankDeficient {
                    model: model.to_string(),
                });
            }
            log_det += pivot.ln();
        }
        Ok(GramFactor {
            gram,
            chol,
            log_det,
        })
    }
}

/// One model's design and data, with the pieces shared by both objectives.
///
/// `exclude` drops a single observation from the likelihood (leave-one-out refits);
/// the coefficient prior always uses the full-data `n` and `X_γ'X_γ`.
#[derive(Debug, Clone)]
pub struct ModelProblem<'a> {
    pub model: ModelIndicator,
    pub x: DMatrix<f64>,
    pub y: &'a DVector<f64>,
    pub n: usize,
    pub gram: GramFactor,
    pub exclude: Option<usize>,
}

impl<'a> ModelProblem<'a> {
    pub fn new(model: &ModelIndicator, data: &'a Dataset) -> Result<Self> {
        if model.p() != data.p() {
            return Err(Error::DimensionMismatch {
                expected: data.p(),
                got: model.p(),
            });
        }
        let x = design(model, data);
        let gram = GramFactor::new(model, x.tr_mul(&x))?;
        Ok(ModelProblem {
            model: *model,
            x,
            y: data.y(),
            n: data.n(),
            gram,
            exclude: None,
        })
    }

    pub fn without_observation(&self, i: usize) -> Self {
        ModelProblem {
            exclude: Some(i),
            ..self.clone()
        }
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn included(&self, i: usize) -> bool {
        self.exclude != Some(i)
    }

    fn check(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: beta.len(),
            });
        }
        Ok(())
    }

    pub fn linear_predictor(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.x * beta
    }

    pub fn log_likelihood(&self, beta: &DVector<f64>) -> f64 {
        let eta = self.linear_predictor(beta);
        self.log_likelihood_eta(&eta)
    }

    pub fn log_likelihood_eta(&self, eta: &DVector<f64>) -> f64 {
        (0..eta.len())
            .filter(|&i| self.included(i))
            .map(|i| log_bernoulli(self.y[i], eta[i]))
            .sum()
    }

    /// Log-density of `N(0, 4n (X'X)^-1)` at `beta`, normalizing constant included.
    pub fn log_prior(&self, beta: &DVector<f64>) -> f64 {
        prior_log_density(beta, &self.gram.gram, self.gram.log_det, self.n)
    }

    pub fn log_posterior_kernel(&self, beta: &DVector<f64>) -> f64 {
        self.log_likelihood(beta) + self.log_prior(beta)
    }

    pub fn objective(&self, kind: FitKind, beta: &DVector<f64>) -> f64 {
        match kind {
            FitKind::Mle => self.log_likelihood(beta),
            FitKind::PosteriorMode => self.log_posterior_kernel(beta),
        }
    }

    pub fn gradient(&self, kind: FitKind, beta: &DVector<f64>) -> DVector<f64> {
        let eta = self.linear_predictor(beta);
        let resid = DVector::from_iterator(
            eta.len(),
            (0..eta.len()).map(|i| {
                if self.included(i) {
                    self.y[i] - logistic(eta[i])
                } else {
                    0.0
                }
            }),
        );
        let mut g = self.x.tr_mul(&resid);
        if kind == FitKind::PosteriorMode {
            g -= (&self.gram.gram * beta) / (4.0 * self.n as f64);
        }
        g
    }

    /// `X' diag(w) X` with `w_i = p_i (1 - p_i)`, plus `X'X / 4n` for the posterior mode.
    pub fn neg_hessian(&self, kind: FitKind, beta: &DVector<f64>) -> DMatrix<f64> {
        let eta = self.linear_predictor(beta);
        let mut scaled = self.x.clone();
        for i in 0..eta.len() {
            let w = if self.included(i) {
                let p = logistic(eta[i]);
                p * (1.0 - p)
            } else {
                0.0
            };
            scaled.row_mut(i).scale_mut(w.sqrt());
        }
        let mut h = scaled.tr_mul(&scaled);
        if kind == FitKind::PosteriorMode {
            h += &self.gram.gram / (4.0 * self.n as f64);
        }
        h
    }

    /// Damped Newton from `start` (the prior mean when `None`).
    ///
    /// For the MLE a point only counts as converged once the Newton step itself has
    /// vanished: under (quasi-)separation the gradient decays exponentially while the
    /// steps stay of order one, so iteration continues until `|beta|_inf` passes
    /// [`DIVERGENCE_BOUND`].
    pub fn fit(&self, kind: FitKind, start: Option<&DVector<f64>>) -> FitResult {
        let d = self.dim();
        let mut beta = start.cloned().unwrap_or_else(|| DVector::zeros(d));
        let mut value = self.objective(kind, &beta);
        let mut iterations = 0;
        let mut diverged = false;
        let mut last_step = f64::INFINITY;
        loop {
            if kind == FitKind::Mle && beta.amax() > DIVERGENCE_BOUND {
                diverged = true;
                break;
            }
            let grad = self.gradient(kind, &beta);
            let small_gradient = grad.amax() < GRADIENT_TOLERANCE;
            if small_gradient && (kind == FitKind::PosteriorMode || last_step < MLE_STEP_TOLERANCE)
            {
                break;
            }
            if iterations >= MAX_NEWTON_ITERATIONS {
                break;
            }
            let hess = self.neg_hessian(kind, &beta);
            let Some(chol) = hess.cholesky() else {
                // Only reachable for the MLE, when the weights underflow under separation.
                diverged = true;
                break;
            };
            let step = chol.solve(&grad);
            last_step = step.amax();
            if small_gradient && last_step < MLE_STEP_TOLERANCE {
                break;
            }
            iterations += 1;
            // The objective is flat to rounding near the optimum; tolerate that much decrease.
            let noise = 64.0 * f64::EPSILON * (1.0 + value.abs());
            let mut t = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_STEP_HALVINGS {
                let candidate = &beta + &step * t;
                let cand_value = self.objective(kind, &candidate);
                if cand_value > value || (cand_value >= value - noise && t == 1.0) {
                    beta = candidate;
                    value = cand_value;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        let grad = self.gradient(kind, &beta);
        let gradient_norm = grad.amax();
        if kind == FitKind::Mle
            && (beta.amax() > DIVERGENCE_BOUND || !(last_step < MLE_STEP_TOLERANCE))
        {
            diverged = true;
        }
        FitResult {
            model: self.model,
            neg_hessian: self.neg_hessian(kind, &beta),
            objective: value,
            converged: !diverged && gradient_norm < GRADIENT_TOLERANCE && value.is_finite(),
            gradient_norm,
            iterations,
            kind,
            beta,
        }
    }
}

/// Log-density of `N(0, 4n G⁻¹)` given `G = X_γ'X_γ` and `log |G|`.
pub fn prior_log_density(
    beta: &DVector<f64>,
    gram: &DMatrix<f64>,
    gram_log_det: f64,
    n: usize,
) -> f64 {
    let d = beta.len() as f64;
    let four_n = 4.0 * n as f64;
    let quad = beta.dot(&(gram * beta));
    -0.5 * d * LN_2PI - 0.5 * d * four_n.ln() + 0.5 * gram_log_det - quad / (2.0 * four_n)
}

pub fn log_likelihood(model: &ModelIndicator, beta: &DVector<f64>, data: &Dataset) -> Result<f64> {
    if beta.len() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            got: beta.len(),
        });
    }
    let x = design(model, data);
    let eta = &x * beta;
    Ok(eta
        .iter()
        .zip(data.y().iter())
        .map(|(&e, &y)| log_bernoulli(y, e))
        .sum())
}

pub fn log_coefficient_prior(
    model: &ModelIndicator,
    beta: &DVector<f64>,
    data: &Dataset,
) -> Result<f64> {
    let problem = ModelProblem::new(model, data)?;
    problem.check(beta)?;
    Ok(problem.log_prior(beta))
}

pub fn mle(model: &ModelIndicator, data: &Dataset) -> Result<FitResult> {
    Ok(ModelProblem::new(model, data)?.fit(FitKind::Mle, None))
}

pub fn posterior_mode(model: &ModelIndicator, data: &Dataset) -> Result<FitResult> {
    Ok(ModelProblem::new(model, data)?.fit(FitKind::PosteriorMode, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SyntheticSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn intercept_only(y: &[f64]) -> Dataset {
        // A zero-signal predictor keeps p >= 1.
        let n = y.len();
        let x = DMatrix::from_fn(n, 1, |i, _| (i % 3) as f64);
        Dataset::new(y.to_vec(), x, vec!["z".into()], vec![1.0]).unwrap()
    }

    fn synthetic(n: usize, beta: Vec<f64>, seed: u64) -> Dataset {
        let p = beta.len() - 1;
        synthesize(&SyntheticSpec {
            n,
            p,
            beta,
            correlations: vec![],
            costs: vec![1.0; p],
            names: None,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn log_likelihood_at_half_probabilities() {
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let d = intercept_only(&y);
        let m = ModelIndicator::empty(1);
        let ll = log_likelihood(&m, &DVector::from_element(1, 0.0), &d).unwrap();
        assert!((ll - 10.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((ll + 6.9315).abs() < 1e-4);
    }

    #[test]
    fn log_likelihood_saturates_without_overflow() {
        assert!(log_bernoulli(1.0, 50.0).abs() < 1e-15);
        assert!(log_bernoulli(0.0, -800.0).abs() < 1e-15);
        assert!((log_bernoulli(0.0, 800.0) + 800.0).abs() < 1e-9);
    }

    #[test]
    fn log_likelihood_matches_hand_expansion() {
        let d = intercept_only(&[1.0, 0.0]);
        let m = ModelIndicator::empty(1);
        let c: f64 = 0.7;
        let ll = log_likelihood(&m, &DVector::from_element(1, c), &d).unwrap();
        let expected = c - 2.0 * (1.0 + c.exp()).ln();
        assert!((ll - expected).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let d = intercept_only(&[1.0, 0.0]);
        let m = ModelIndicator::empty(1);
        assert!(matches!(
            log_likelihood(&m, &DVector::zeros(2), &d),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn prior_at_zero_and_quadratic_term() {
        let d = synthetic(50, vec![0.0, 1.0, -1.0], 3);
        let m = ModelIndicator::full(2);
        let x = design(&m, &d);
        let xtx = x.tr_mul(&x);
        let n = d.n() as f64;
        let zero = DVector::zeros(3);
        let at_zero = log_coefficient_prior(&m, &zero, &d).unwrap();
        let cov = (xtx.clone().try_inverse().unwrap()) * (4.0 * n);
        let expected = -1.5 * LN_2PI - 0.5 * cov.determinant().ln();
        assert!((at_zero - expected).abs() < 1e-10);

        let beta = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let at_beta = log_coefficient_prior(&m, &beta, &d).unwrap();
        let quad = beta.dot(&(&xtx * &beta));
        assert!(((at_beta - at_zero) + quad / (8.0 * n)).abs() < 1e-10);
    }

    #[test]
    fn duplicate_column_is_rank_deficient() {
        let base = synthetic(40, vec![0.0, 1.0], 5);
        let col = base.x().column(1).clone_owned();
        let x = DMatrix::from_columns(&[col.clone(), col]);
        let d = Dataset::new(
            base.y().iter().copied().collect(),
            x,
            vec!["a".into(), "b".into()],
            vec![1.0, 1.0],
        )
        .unwrap();
        let m = ModelIndicator::full(2);
        assert!(matches!(
            log_coefficient_prior(&m, &DVector::zeros(3), &d),
            Err(Error::RankDeficient { .. })
        ));
        assert!(matches!(
            posterior_mode(&m, &d),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn mle_of_intercept_is_sample_logit() {
        let y = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let d = intercept_only(&y);
        let fit = mle(&ModelIndicator::empty(1), &d).unwrap();
        assert!(fit.converged, "{fit:?}");
        assert!((fit.beta[0] - (7.0f64 / 3.0).ln()).abs() < 1e-9);
        assert!((fit.beta[0] - 0.8473).abs() < 1e-4);
    }

    #[test]
    fn separated_data_does_not_converge() {
        let x = DMatrix::from_column_slice(6, 1, &[-3.0, -2.0, -1.0, 1.0, 2.0, 3.0]);
        let d = Dataset::new(
            vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0],
            x,
            vec!["x".into()],
            vec![1.0],
        )
        .unwrap();
        let fit = mle(&ModelIndicator::full(1), &d).unwrap();
        assert!(!fit.converged);
        // The prior keeps the posterior mode finite.
        let mode = posterior_mode(&ModelIndicator::full(1), &d).unwrap();
        assert!(mode.converged);
    }

    #[test]
    fn mle_recovers_generating_coefficients() {
        let d = synthetic(500, vec![0.0, 1.0], 11);
        let fit = mle(&ModelIndicator::full(1), &d).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() <= 0.2, "{}", fit.beta);
        assert!((fit.beta[1] - 1.0).abs() <= 0.2, "{}", fit.beta);
    }

    #[test]
    fn balanced_intercept_mode_is_zero() {
        let y: Vec<f64> = (0..20).map(|i| (i % 2) as f64).collect();
        let fit = posterior_mode(&ModelIndicator::empty(1), &intercept_only(&y)).unwrap();
        assert!(fit.converged);
        assert!(fit.beta[0].abs() < 1e-10);
    }

    #[test]
    fn posterior_mode_matches_grid_search() {
        let d = synthetic(200, vec![0.4, 0.8], 21);
        let m = ModelIndicator::full(1);
        let problem = ModelProblem::new(&m, &d).unwrap();
        let fit = problem.fit(FitKind::PosteriorMode, None);
        assert!(fit.converged && fit.gradient_norm < 1e-8);
        let pitch = 0.01;
        let steps = (10.0 / pitch) as usize;
        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for a in 0..=steps {
            for b in 0..=steps {
                let beta =
                    DVector::from_vec(vec![-5.0 + a as f64 * pitch, -5.0 + b as f64 * pitch]);
                let h = problem.log_posterior_kernel(&beta);
                if h > best.0 {
                    best = (h, beta[0], beta[1]);
                }
            }
        }
        assert!((fit.beta[0] - best.1).abs() <= pitch);
        assert!((fit.beta[1] - best.2).abs() <= pitch);
    }

    #[test]
    fn mode_dominates_random_perturbations() {
        let d = synthetic(150, vec![-0.5, 1.0, 0.0, -0.7], 8);
        let m = ModelIndicator::full(3);
        let problem = ModelProblem::new(&m, &d).unwrap();
        let fit = problem.fit(FitKind::PosteriorMode, None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let eps = DVector::from_fn(4, |_, _| rng.random_range(-0.5..0.5));
            assert!(fit.objective >= problem.log_posterior_kernel(&(&fit.beta + eps)));
        }
    }

    #[test]
    fn mle_deviance_is_minimal() {
        let d = synthetic(120, vec![0.2, 0.9, -0.4], 4);
        let m = ModelIndicator::full(2);
        let fit = mle(&m, &d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let beta = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            assert!(fit.objective >= log_likelihood(&m, &beta, &d).unwrap());
        }
    }
}
