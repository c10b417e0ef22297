//! Cost-penalized prior on model space.
//!
//! Each predictor is an independent Bernoulli inclusion with
//! `f(γ_j = 1) ∝ exp[-(γ_j / 2)(c_j / c₀ - 1) log n]`, normalized so the
//! product over `j` is a proper mass function on `{0,1}^p`. With `κ_j = c_j / c₀`
//! the penalty on `-2 log f(γ)` for including `j` is `(κ_j - 1) log n`, so adding
//! a predictor of cost `κ c₀` costs the same as adding `κ` baseline-cost
//! predictors under BIC.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::model_space::ModelIndicator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Penalize by data-collection cost.
    CostBenefit,
    /// Ignore costs; every ratio `c_j / c₀` is 1 and the prior is uniform.
    BenefitOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPriorSpec {
    costs: Vec<f64>,
    baseline: f64,
    n: usize,
    mode: PriorMode,
}

impl CostPriorSpec {
    /// Baseline cost defaults to the cheapest predictor.
    pub fn new(costs: Vec<f64>, n: usize, mode: PriorMode) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::InvalidPrior("empty cost schedule".into()));
        }
        if let Some(bad) = costs.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidPrior(format!("cost {bad} is not positive")));
        }
        if n < 2 {
            return Err(Error::InvalidPrior(format!(
                "sample size {n} must be at least 2"
            )));
        }
        let baseline = costs.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(CostPriorSpec {
            costs,
            baseline,
            n,
            mode,
        })
    }

    pub fn for_dataset(data: &Dataset, mode: PriorMode) -> Result<Self> {
        Self::new(data.costs().to_vec(), data.n(), mode)
    }

    /// Lowers the baseline cost. Raising it above the cheapest predictor would give
    /// that predictor a negative extra penalty and is rejected.
    pub fn with_baseline(mut self, baseline: f64) -> Result<Self> {
        let min = self.costs.iter().copied().fold(f64::INFINITY, f64::min);
        if !(baseline > 0.0 && baseline <= min) {
            return Err(Error::InvalidPrior(format!(
                "baseline cost {baseline} must lie in (0, {min}]"
            )));
        }
        self.baseline = baseline;
        Ok(self)
    }

    pub fn with_mode(mut self, mode: PriorMode) -> Self {
        self.mode = mode;
        self
    }

    /// Prior for a sub-space of predictors (1-based indices), keeping baseline and `n`.
    pub fn restrict(&self, indices: &[usize]) -> Result<Self> {
        let p = self.p();
        let costs = indices
            .iter()
            .map(|&j| {
                if j == 0 || j > p {
                    Err(Error::IndexOutOfRange { index: j, p })
                } else {
                    Ok(self.costs[j - 1])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CostPriorSpec {
            costs,
            ..self.clone()
        })
    }

    pub fn p(&self) -> usize {
        self.costs.len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// `c₀`.
    pub fn baseline(&self) -> f64 {
        self.baseline
    }

    pub fn mode(&self) -> PriorMode {
        self.mode
    }

    pub fn log_n(&self) -> f64 {
        (self.n as f64).ln()
    }

    /// Effective `κ_j = c_j / c₀` for 1-based `j`; always 1 in benefit-only mode.
    pub fn cost_ratio(&self, j: usize) -> f64 {
        match self.mode {
            PriorMode::CostBenefit => self.costs[j - 1] / self.baseline,
            PriorMode::BenefitOnly => 1.0,
        }
    }

    /// `C_γ / c₀` under the effective ratios; equals the predictor count in benefit-only mode.
    pub fn scaled_cost(&self, model: &ModelIndicator) -> f64 {
        model
            .indices()
            .into_iter()
            .map(|j| self.cost_ratio(j))
            .sum()
    }

    /// Log prior contribution of including predictor `j` relative to excluding it.
    pub fn inclusion_log_weight(&self, j: usize) -> f64 {
        -0.5 * (self.cost_ratio(j) - 1.0) * self.log_n()
    }

    /// `f(γ_j = 1)`.
    pub fn inclusion_probability(&self, j: usize) -> f64 {
        let w = self.inclusion_log_weight(j).exp();
        w / (1.0 + w)
    }

    fn check(&self, model: &ModelIndicator) {
        assert_eq!(
            model.p(),
            self.p(),
            "model over {} predictors used with a prior over {}",
            model.p(),
            self.p()
        );
    }
}

/// Normalized `log f(γ)`.
pub fn log_model_prior(model: &ModelIndicator, spec: &CostPriorSpec) -> f64 {
    spec.check(model);
    (1..=spec.p())
        .map(|j| {
            let w = spec.inclusion_log_weight(j);
            let log_norm = w.exp().ln_1p();
            if model.contains(j) {
                w - log_norm
            } else {
                -log_norm
            }
        })
        .sum()
}

/// `log f(γᵏ) - log f(γˡ)`; normalizing terms cancel and are never formed.
pub fn log_prior_odds(k: &ModelIndicator, l: &ModelIndicator, spec: &CostPriorSpec) -> f64 {
    spec.check(k);
    spec.check(l);
    (1..=spec.p())
        .map(|j| {
            let diff = k.contains(j) as i32 - l.contains(j) as i32;
            if diff == 0 {
                0.0
            } else {
                diff as f64 * spec.inclusion_log_weight(j)
            }
        })
        .sum()
}

/// Extra penalty `ξ` the prior adds to `-2 log B_kl`.
pub fn extra_penalty_xi(k: &ModelIndicator, l: &ModelIndicator, spec: &CostPriorSpec) -> f64 {
    -2.0 * log_prior_odds(k, l, spec)
}

/// Total penalty on the `-2 log` likelihood ratio: BIC's dimension penalty plus `ξ`,
/// which reduces to `(C_γᵏ - C_γˡ) / c₀ · log n`.
pub fn omega_penalty(k: &ModelIndicator, l: &ModelIndicator, spec: &CostPriorSpec) -> f64 {
    (spec.scaled_cost(k) - spec.scaled_cost(l)) * spec.log_n()
}
