//! Fit and predictive-accuracy measures for a single model: deviance summaries
//! and leave-one-out log scores.

use std::f64::consts::PI;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::glm::{log_bernoulli, FitKind, ModelProblem};
use crate::model_space::ModelIndicator;
use crate::num::LogSumExp;
use crate::samplers::{sample_within_model, WithinModelConfig};

/// Largest `n` for which [`cv_log_score_exact`] will run `n` refits.
pub const EXACT_CV_LIMIT: usize = 500;

/// Per-observation predictive densities are floored here before inversion.
pub const DENSITY_FLOOR: f64 = 1e-300;

const HERMITE_NODES: usize = 64;
const JACKKNIFE_BATCHES: usize = 20;

/// `-2 Σ log f(y_i | β)`.
pub fn deviance(model: &ModelIndicator, beta: &DVector<f64>, data: &Dataset) -> Result<f64> {
    if model.p() != data.p() || beta.len() != model.dimension() {
        return Err(Error::DimensionMismatch {
            expected: model.dimension(),
            got: beta.len(),
        });
    }
    let columns = model.columns();
    let x = data.x();
    let mut total = 0.0;
    for i in 0..data.n() {
        let eta: f64 = columns
            .iter()
            .enumerate()
            .map(|(k, &c)| x[(i, c)] * beta[k])
            .sum();
        total += log_bernoulli(data.y()[i], eta);
    }
    Ok(-2.0 * total)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DevianceSummary {
    pub model: ModelIndicator,
    pub minimum: f64,
    pub median: f64,
    pub mean: f64,
    pub maximum: f64,
    /// Deviance at the maximum-likelihood estimate, the floor of the distribution.
    pub mle_deviance: Option<f64>,
    pub draws: usize,
    pub sampler: WithinModelConfig,
    pub acceptance_rate: f64,
}

/// Deviance over within-model posterior draws.
pub fn posterior_deviance(
    model: &ModelIndicator,
    data: &Dataset,
    cfg: &WithinModelConfig,
) -> Result<DevianceSummary> {
    let sample = sample_within_model(model, data, cfg)?;
    summarize_deviance(model, data, &sample.draws, cfg, sample.acceptance_rate)
}

fn summarize_deviance(
    model: &ModelIndicator,
    data: &Dataset,
    draws: &[DVector<f64>],
    cfg: &WithinModelConfig,
    acceptance_rate: f64,
) -> Result<DevianceSummary> {
    if draws.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut values = draws
        .iter()
        .map(|b| deviance(model, b, data))
        .collect::<Result<Vec<_>>>()?;
    values.sort_by(f64::total_cmp);
    let m = values.len();
    let median = if m % 2 == 1 {
        values[m / 2]
    } else {
        0.5 * (values[m / 2 - 1] + values[m / 2])
    };
    let problem = ModelProblem::new(model, data)?;
    let mle = problem.fit(FitKind::Mle, None);
    Ok(DevianceSummary {
        model: *model,
        minimum: values[0],
        median,
        mean: values.iter().sum::<f64>() / m as f64,
        maximum: values[m - 1],
        mle_deviance: mle.converged.then(|| -2.0 * mle.objective),
        draws: m,
        sampler: *cfg,
        acceptance_rate,
    })
}

/// Deviance summary and both log-score estimates for one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelDiagnostics {
    pub model: ModelIndicator,
    pub deviance: DevianceSummary,
    /// `None` when `n` exceeds [`EXACT_CV_LIMIT`].
    pub cv_exact: Option<f64>,
    pub cv_mcmc: CvLogScore,
}

/// Runs one within-model chain and derives every diagnostic from its draws.
pub fn diagnose(
    model: &ModelIndicator,
    data: &Dataset,
    cfg: &WithinModelConfig,
) -> Result<ModelDiagnostics> {
    let sample = sample_within_model(model, data, cfg)?;
    let deviance = summarize_deviance(model, data, &sample.draws, cfg, sample.acceptance_rate)?;
    let cv_mcmc = cv_log_score_from_draws(model, data, &sample.draws)?;
    let cv_exact = if data.n() <= EXACT_CV_LIMIT {
        Some(cv_log_score_exact(model, data)?)
    } else {
        None
    };
    Ok(ModelDiagnostics {
        model: *model,
        deviance,
        cv_exact,
        cv_mcmc,
    })
}

/// Gauss–Hermite nodes and weights for `∫ e^{-t²} g(t) dt`, by Newton iteration on the
/// orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// `log E[f(y | logistic(m + s Z))]` for `Z ~ N(0, 1)`.
fn log_predictive(y: f64, m: f64, s: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let mut acc = LogSumExp::default();
    for (t, w) in nodes.iter().zip(weights) {
        acc.push(w.ln() + log_bernoulli(y, m + std::f64::consts::SQRT_2 * s * t));
    }
    acc.value() - 0.5 * PI.ln()
}

/// Leave-one-out log score from `n` posterior-mode refits, each observation's predictive
/// density integrated over the refit's Gaussian approximation on the linear predictor.
pub fn cv_log_score_exact(model: &ModelIndicator, data: &Dataset) -> Result<f64> {
    let n = data.n();
    if n > EXACT_CV_LIMIT {
        return Err(Error::Guard(format!(
            "exact leave-one-out needs n <= {EXACT_CV_LIMIT}, got {n}"
        )));
    }
    let problem = ModelProblem::new(model, data)?;
    let full = problem.fit(FitKind::PosteriorMode, None);
    if !full.converged {
        return Err(Error::NotConverged {
            model: model.to_string(),
        });
    }
    let (nodes, weights) = gauss_hermite(HERMITE_NODES);
    let terms = (0..n)
        .into_par_iter()
        .map(|i| {
            let loo = problem.without_observation(i);
            let fit = loo.fit(FitKind::PosteriorMode, Some(&full.beta));
            if !fit.converged {
                return Err(Error::NotConverged {
                    model: format!("{model} without observation {}", i + 1),
                });
            }
            let chol = fit.neg_hessian.clone().cholesky().ok_or_else(|| {
                Error::Numerical(format!(
                    "leave-one-out Hessian {} not positive definite",
                    i + 1
                ))
            })?;
            let xi = problem.x.row(i).transpose();
            let m = xi.dot(&fit.beta);
            let s = xi.dot(&chol.solve(&xi)).max(0.0).sqrt();
            Ok(log_predictive(data.y()[i], m, s, &nodes, &weights))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(terms.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvLogScore {
    pub estimate: f64,
    /// Delete-one-batch jackknife over 20 contiguous batches of draws.
    pub standard_error: f64,
    pub draws: usize,
    /// Per-(observation, draw) densities raised to the floor.
    pub floored_terms: u64,
    /// Some observation had every draw floored.
    pub unreliable: bool,
}

/// Posterior-mean inverse-density estimate of the leave-one-out log score from
/// within-model draws.
pub fn cv_log_score_mcmc(
    model: &ModelIndicator,
    data: &Dataset,
    cfg: &WithinModelConfig,
) -> Result<CvLogScore> {
    let sample = sample_within_model(model, data, cfg)?;
    cv_log_score_from_draws(model, data, &sample.draws)
}

pub fn cv_log_score_from_draws(
    model: &ModelIndicator,
    data: &Dataset,
    draws: &[DVector<f64>],
) -> Result<CvLogScore> {
    let t = draws.len();
    if t == 0 {
        return Err(Error::EmptyChain);
    }
    let d = model.dimension();
    if model.p() != data.p() {
        return Err(Error::DimensionMismatch {
            expected: data.p(),
            got: model.p(),
        });
    }
    if let Some(bad) = draws.iter().find(|b| b.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: bad.len(),
        });
    }
    let n = data.n();
    let columns = model.columns();
    let x = data.x();
    let floor = DENSITY_FLOOR.ln();
    let batches = JACKKNIFE_BATCHES.min(t);
    // acc[i * batches + b] accumulates log Σ_t 1/f(y_i | β_t) over batch b.
    let mut acc = vec![LogSumExp::default(); n * batches];
    let mut batch_sizes = vec![0usize; batches];
    let mut floored = vec![0u64; n];
    for (k, beta) in draws.iter().enumerate() {
        let b = k * batches / t;
        batch_sizes[b] += 1;
        for i in 0..n {
            let eta: f64 = columns
                .iter()
                .enumerate()
                .map(|(c, &col)| x[(i, col)] * beta[c])
                .sum();
            let mut lf = log_bernoulli(data.y()[i], eta);
            if lf < floor {
                lf = floor;
                floored[i] += 1;
            }
            acc[i * batches + b].push(-lf);
        }
    }
    let estimate_without = |skip: Option<usize>| -> f64 {
        let kept: usize = (0..batches)
            .filter(|&b| Some(b) != skip)
            .map(|b| batch_sizes[b])
            .sum();
        let mut total = 0.0;
        for i in 0..n {
            let mut lse = LogSumExp::default();
            for b in (0..batches).filter(|&b| Some(b) != skip) {
                lse.merge(&acc[i * batches + b]);
            }
            total += -(lse.value() - (kept as f64).ln());
        }
        total / n as f64
    };
    let estimate = estimate_without(None);
    let standard_error = if batches < 2 {
        f64::NAN
    } else {
        let loo: Vec<f64> = (0..batches).map(|b| estimate_without(Some(b))).collect();
        let mean = loo.iter().sum::<f64>() / batches as f64;
        let g = batches as f64;
        ((g - 1.0) / g * loo.iter().map(|v| (v - mean).powi(2)).sum::<f64>()).sqrt()
    };
    let floored_terms: u64 = floored.iter().sum();
    let unreliable = floored.iter().any(|&c| c as usize == t);
    if floored_terms > 0 {
        log::warn!(
            "{floored_terms} predictive densities for {model} were floored at {DENSITY_FLOOR:e}"
        );
    }
    Ok(CvLogScore {
        estimate,
        standard_error,
        draws: t,
        floored_terms,
        unreliable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SyntheticSpec};
    use crate::glm::{log_likelihood, mle};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synth(n: usize, beta: Vec<f64>, seed: u64) -> Dataset {
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
    fn deviance_at_half_probability() {
        let y: Vec<f64> = (0..10).map(|i| (i % 2) as f64).collect();
        let x = DMatrix::from_fn(10, 1, |i, _| i as f64);
        let data = Dataset::new(y, x, vec!["a".into()], vec![1.0]).unwrap();
        let model = ModelIndicator::full(1);
        let dev = deviance(&model, &DVector::zeros(2), &data).unwrap();
        assert!((dev - 20.0 * 2f64.ln()).abs() < 1e-12);
        assert!(deviance(&model, &DVector::zeros(3), &data).is_err());
    }

    #[test]
    fn deviance_vanishes_for_saturated_predictions() {
        let y = vec![0.0, 0.0, 1.0, 1.0];
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, -2.0, 1.0, 2.0]);
        let data = Dataset::new(y, x, vec!["a".into()], vec![1.0]).unwrap();
        let model = ModelIndicator::full(1);
        let dev = deviance(&model, &DVector::from_vec(vec![0.0, 40.0]), &data).unwrap();
        assert!(dev < 1e-15);
    }

    #[test]
    fn deviance_is_minus_twice_loglik_and_floored_at_mle() {
        let data = synth(200, vec![0.2, 0.7, -0.5], 3);
        let model = ModelIndicator::full(2);
        let fit = mle(&model, &data).unwrap();
        let floor = deviance(&model, &fit.beta, &data).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let b = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
            let dev = deviance(&model, &b, &data).unwrap();
            let ll = log_likelihood(&model, &b, &data).unwrap();
            assert!((dev + 2.0 * ll).abs() <= 1e-12 * dev.abs().max(1.0));
            assert!(dev >= floor);
        }
    }

    #[test]
    fn posterior_deviance_ordering() {
        let data = synth(150, vec![0.0, 0.8, 0.0], 9);
        let model = ModelIndicator::from_indices(2, &[1]).unwrap();
        let cfg = WithinModelConfig {
            burn_in: 500,
            draws: 2_000,
            thin: 2,
            seed: 4,
        };
        let s = posterior_deviance(&model, &data, &cfg).unwrap();
        assert!(s.minimum <= s.median && s.median <= s.maximum);
        assert!(s.minimum <= s.mean && s.mean <= s.maximum);
        let floor = s.mle_deviance.unwrap();
        assert!(s.minimum >= floor);
        assert!(s.median >= floor);
        assert_eq!(s.draws, 2_000);
    }

    #[test]
    fn hermite_rule_integrates_gaussian_moments() {
        let (x, w) = gauss_hermite(64);
        let total: f64 = w.iter().sum();
        assert!((total - PI.sqrt()).abs() < 1e-12);
        // E[Z^2] = 1 and E[Z^4] = 3 under N(0, 1) after t = z / sqrt(2).
        let m2: f64 = x.iter().zip(&w).map(|(t, w)| w * 2.0 * t * t).sum::<f64>() / PI.sqrt();
        let m4: f64 = x
            .iter()
            .zip(&w)
            .map(|(t, w)| w * 4.0 * t.powi(4))
            .sum::<f64>()
            / PI.sqrt();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        for k in 1..64 {
            assert!(x[k] < x[k - 1]);
        }
    }

    #[test]
    fn intercept_only_balanced_score_is_minus_log_two() {
        let n = 400;
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| (i % 7) as f64);
        let data = Dataset::new(y, x, vec!["a".into()], vec![1.0]).unwrap();
        let ls = cv_log_score_exact(&ModelIndicator::empty(1), &data).unwrap();
        assert!((ls + 2f64.ln()).abs() < 5e-3, "{ls}");
    }

    #[test]
    fn exact_score_ignores_observation_order() {
        let data = synth(80, vec![0.1, 0.9, -0.4], 17);
        let model = ModelIndicator::full(2);
        let a = cv_log_score_exact(&model, &data).unwrap();
        let perm: Vec<usize> = (0..80).map(|i| (i * 37) % 80).collect();
        let x = DMatrix::from_fn(80, 2, |i, j| data.x()[(perm[i], j + 1)]);
        let y: Vec<f64> = perm.iter().map(|&i| data.y()[i]).collect();
        let shuffled = Dataset::new(y, x, data.names().to_vec(), data.costs().to_vec()).unwrap();
        let b = cv_log_score_exact(&model, &shuffled).unwrap();
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        assert!(a <= 0.0);
    }

    #[test]
    fn exact_score_guard() {
        let data = synth(501, vec![0.0, 0.3], 1);
        assert!(matches!(
            cv_log_score_exact(&ModelIndicator::full(1), &data),
            Err(Error::Guard(_))
        ));
    }

    #[test]
    fn single_draw_identity() {
        let data = synth(60, vec![0.2, 0.5, -0.3, 0.1], 2);
        let model = ModelIndicator::full(3);
        let beta = DVector::from_vec(vec![0.1, 0.4, -0.2, 0.3]);
        let ls = cv_log_score_from_draws(&model, &data, std::slice::from_ref(&beta)).unwrap();
        let dev = deviance(&model, &beta, &data).unwrap();
        assert!((ls.estimate + dev / (2.0 * 60.0)).abs() < 1e-12);
        assert!(ls.estimate <= 0.0);
    }

    #[test]
    fn floored_densities_are_flagged() {
        let y = vec![0.0, 1.0, 0.0, 1.0];
        let x = DMatrix::from_column_slice(4, 1, &[-1.0, -2.0, 1.0, 2.0]);
        let data = Dataset::new(y, x, vec!["a".into()], vec![1.0]).unwrap();
        let model = ModelIndicator::full(1);
        let beta = DVector::from_vec(vec![0.0, -1000.0]);
        let ls = cv_log_score_from_draws(&model, &data, &[beta]).unwrap();
        assert!(ls.unreliable);
        assert_eq!(ls.floored_terms, 2);
        assert!(ls.estimate.is_finite());
    }

    #[test]
    fn mcmc_score_is_seeded_and_stable_in_draws() {
        let data = synth(60, vec![0.2, 0.8, -0.6, 0.3], 5);
        let model = ModelIndicator::full(3);
        let cfg = WithinModelConfig {
            seed: 11,
            ..Default::default()
        };
        let a = cv_log_score_mcmc(&model, &data, &cfg).unwrap();
        let b = cv_log_score_mcmc(&model, &data, &cfg).unwrap();
        assert_eq!(a, b);
        let doubled = cv_log_score_mcmc(
            &model,
            &data,
            &WithinModelConfig {
                draws: 2 * cfg.draws,
                ..cfg
            },
        )
        .unwrap();
        assert!(
            (doubled.estimate - a.estimate).abs() < a.standard_error,
            "{} vs {} (se {})",
            doubled.estimate,
            a.estimate,
            a.standard_error
        );
        assert!(a.estimate <= 0.0 && !a.unreliable);
    }
}
