//! Exact answers for small problems: full enumeration of the model space and
//! grid quadrature of the marginal likelihood.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evidence::{score, Evaluation, Exclusion, Method};
use crate::glm::{log_bernoulli, FitKind, ModelProblem};
use crate::model_space::{enumerate_all, ModelIndicator};
use crate::num::{fmt_f64, log_sum_exp};
use crate::priors::{CostPriorSpec, PriorMode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorRow {
    pub model: ModelIndicator,
    pub dimension: usize,
    pub cost: f64,
    /// `None` for excluded models.
    pub score: Option<f64>,
    pub probability: f64,
    pub exclusion: Option<Exclusion>,
}

/// Normalized posterior over an explicit set of models, sorted by descending probability.
#[derive(Debug, Clone, Serialize)]
pub struct PosteriorTable {
    p: usize,
    method: Method,
    mode: PriorMode,
    /// `log Σ exp(-score / 2)` over the scored models.
    log_normalizer: f64,
    rows: Vec<PosteriorRow>,
}

impl PosteriorTable {
    /// Builds a table from evaluations of distinct models over the same `p`.
    pub fn from_evaluations(
        p: usize,
        method: Method,
        mode: PriorMode,
        costs: &[f64],
        evaluations: &[Evaluation],
    ) -> Result<Self> {
        let log_normalizer = log_sum_exp(evaluations.iter().map(|e| e.log_weight()));
        if !log_normalizer.is_finite() {
            return Err(Error::Numerical(
                "every model in the table is excluded".to_string(),
            ));
        }
        let mut rows: Vec<PosteriorRow> = evaluations
            .iter()
            .map(|e| {
                let model = e.model();
                PosteriorRow {
                    model,
                    dimension: model.dimension(),
                    cost: model.total_cost(costs),
                    score: e.scored().map(|s| s.score),
                    probability: (e.log_weight() - log_normalizer).exp(),
                    exclusion: match e {
                        Evaluation::Excluded { reason, .. } => Some(*reason),
                        Evaluation::Scored(_) => None,
                    },
                }
            })
            .collect();
        rows.sort_by(|a, b| {
            b.probability
                .total_cmp(&a.probability)
                .then(a.model.encoding().cmp(&b.model.encoding()))
        });
        Ok(PosteriorTable {
            p,
            method,
            mode,
            log_normalizer,
            rows,
        })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn mode(&self) -> PriorMode {
        self.mode
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn rows(&self) -> &[PosteriorRow] {
        &self.rows
    }

    pub fn top(&self, k: usize) -> &[PosteriorRow] {
        &self.rows[..k.min(self.rows.len())]
    }

    pub fn best(&self) -> &PosteriorRow {
        &self.rows[0]
    }

    /// Probability of `model`, zero if it is not in the table.
    pub fn probability(&self, model: &ModelIndicator) -> f64 {
        self.rows
            .iter()
            .find(|r| r.model == *model)
            .map_or(0.0, |r| r.probability)
    }

    pub fn excluded(&self) -> impl Iterator<Item = &PosteriorRow> {
        self.rows.iter().filter(|r| r.exclusion.is_some())
    }

    /// Writes `model,dim,cost,score,prob,cumprob,excluded`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "model", "dim", "cost", "score", "prob", "cumprob", "excluded",
        ])?;
        let mut cum = 0.0;
        for r in &self.rows {
            cum += r.probability;
            w.write_record([
                r.model.to_string(),
                r.dimension.to_string(),
                fmt_f64(r.cost),
                r.score.map(fmt_f64).unwrap_or_default(),
                fmt_f64(r.probability),
                fmt_f64(cum),
                r.exclusion.map(|e| e.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Scores all `2^p` models and normalizes them.
pub fn enumerate_posterior(
    data: &Dataset,
    spec: &CostPriorSpec,
    method: Method,
) -> Result<PosteriorTable> {
    let p = data.p();
    let models: Vec<ModelIndicator> = enumerate_all(p)?.collect();
    let evaluations = models
        .par_iter()
        .map(|m| score(m, data, spec, method))
        .collect::<Result<Vec<_>>>()?;
    PosteriorTable::from_evaluations(p, method, spec.mode(), spec.costs(), &evaluations)
}

/// `f(γ_j = 1 | y)` for every predictor.
pub fn marginal_inclusion_from_table(table: &PosteriorTable) -> Vec<f64> {
    let mut out = vec![0.0; table.p()];
    for row in table.rows() {
        for j in row.model.indices() {
            out[j - 1] += row.probability;
        }
    }
    for v in &mut out {
        *v = v.clamp(0.0, 1.0);
    }
    out
}

/// Largest `d_γ` accepted by the quadrature oracle.
pub const QUADRATURE_MAX_DIMENSION: usize = 3;

/// What is integrated against the coefficient prior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LikelihoodTerm {
    /// The Bernoulli log-likelihood of the data.
    Bernoulli,
    /// A constant log-likelihood; the grid is then laid over the prior itself.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureOptions {
    /// Nodes per axis; must be `≡ 1 (mod 4)` and at least 201. `None` picks 401 for
    /// `d ≤ 2` and 201 for `d = 3`.
    pub nodes: Option<usize>,
    /// Half-width of the grid in standard deviations of the integrand.
    pub half_width: f64,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        QuadratureOptions {
            nodes: None,
            half_width: 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quadrature {
    pub log_marginal: f64,
    /// Change in the log integral when the pitch is doubled.
    pub error_estimate: f64,
    pub nodes: usize,
}

pub fn quadrature_log_marginal(model: &ModelIndicator, data: &Dataset) -> Result<Quadrature> {
    quadrature_log_marginal_with(
        model,
        data,
        LikelihoodTerm::Bernoulli,
        QuadratureOptions::default(),
    )
}

/// `log ∫ exp(loglik(β) + log prior(β)) dβ` by composite Simpson on a tensor grid.
///
/// The grid lives in whitened coordinates `β = center + L z`, where `L L'` is the
/// inverse curvature of the integrand at `center`.
pub fn quadrature_log_marginal_with(
    model: &ModelIndicator,
    data: &Dataset,
    likelihood: LikelihoodTerm,
    opts: QuadratureOptions,
) -> Result<Quadrature> {
    let d = model.dimension();
    if d > QUADRATURE_MAX_DIMENSION {
        return Err(Error::Guard(format!(
            "quadrature supports at most {QUADRATURE_MAX_DIMENSION} coefficients, model {model} has {d}"
        )));
    }
    let nodes = opts.nodes.unwrap_or(if d <= 2 { 401 } else { 201 });
    if nodes < 201 || nodes % 4 != 1 {
        return Err(Error::Config(format!(
            "quadrature node count {nodes} must be at least 201 and equal to 1 mod 4"
        )));
    }
    if !(opts.half_width > 0.0) {
        return Err(Error::Config(
            "quadrature half-width must be positive".into(),
        ));
    }
    let problem = ModelProblem::new(model, data)?;
    let four_n = 4.0 * data.n() as f64;
    let (center, covariance) = match likelihood {
        LikelihoodTerm::Bernoulli => {
            let fit = problem.fit(FitKind::PosteriorMode, None);
            if !fit.converged {
                return Err(Error::NotConverged {
                    model: model.to_string(),
                });
            }
            let cov = invert_spd(&fit.neg_hessian)?;
            (fit.beta, cov)
        }
        LikelihoodTerm::Constant(_) => (DVector::zeros(d), problem.gram.chol.inverse() * four_n),
    };
    let l = covariance
        .cholesky()
        .ok_or_else(|| Error::Numerical("integrand curvature is not positive definite".into()))?
        .l();
    let log_jacobian: f64 = l.diagonal().iter().map(|v| v.ln()).sum();

    let eta0 = &problem.x * &center;
    let a = &problem.x * &l;
    let log_integrand = |z: &[f64]| -> f64 {
        let zv = DVector::from_column_slice(z);
        let beta = &center + &l * &zv;
        let ll = match likelihood {
            LikelihoodTerm::Bernoulli => (0..eta0.len())
                .map(|i| {
                    let mut eta = eta0[i];
                    for (k, zk) in z.iter().enumerate() {
                        eta += a[(i, k)] * zk;
                    }
                    log_bernoulli(problem.y[i], eta)
                })
                .sum(),
            LikelihoodTerm::Constant(c) => c,
        };
        ll + problem.log_prior(&beta)
    };

    let h = 2.0 * opts.half_width / (nodes - 1) as f64;
    let grid: Vec<f64> = (0..nodes)
        .map(|i| -opts.half_width + i as f64 * h)
        .collect();
    let weights = simpson_weights(nodes, h);
    let coarse = simpson_weights(nodes.div_ceil(2), 2.0 * h);
    let f0 = log_integrand(&vec![0.0; d]);

    let inner: usize = nodes.pow(d as u32 - 1);
    let (fine, sub) = (0..nodes)
        .into_par_iter()
        .map(|i0| {
            let mut fine = 0.0;
            let mut sub = 0.0;
            let mut z = vec![0.0; d];
            let mut idx = vec![0usize; d];
            for rest in 0..inner {
                idx[0] = i0;
                let mut r = rest;
                for slot in &mut idx[1..] {
                    *slot = r % nodes;
                    r /= nodes;
                }
                for k in 0..d {
                    z[k] = grid[idx[k]];
                }
                let v = (log_integrand(&z) - f0).exp();
                let w: f64 = idx.iter().map(|&i| weights[i]).product();
                fine += w * v;
                if idx.iter().all(|&i| i % 2 == 0) {
                    let w: f64 = idx.iter().map(|&i| coarse[i / 2]).product();
                    sub += w * v;
                }
            }
            (fine, sub)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));

    Ok(Quadrature {
        log_marginal: f0 + log_jacobian + fine.ln(),
        error_estimate: (fine.ln() - sub.ln()).abs(),
        nodes,
    })
}

fn simpson_weights(nodes: usize, h: f64) -> Vec<f64> {
    (0..nodes)
        .map(|i| {
            let w = if i == 0 || i == nodes - 1 {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

fn invert_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(m.clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("matrix is not positive definite".into()))?
        .inverse())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synthesize, SyntheticSpec};
    use crate::glm::mle;

    fn synth(n: usize, beta: Vec<f64>, costs: Vec<f64>, seed: u64) -> Dataset {
        synthesize(&SyntheticSpec {
            n,
            p: costs.len(),
            beta,
            correlations: vec![],
            costs,
            names: None,
            seed,
        })
        .unwrap()
    }

    fn balanced(n: usize) -> Dataset {
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| ((i * 37 % 11) as f64 - 5.0) / 3.0);
        Dataset::new(y, x, vec!["a".into()], vec![1.0]).unwrap()
    }

    fn total(t: &PosteriorTable) -> f64 {
        t.rows().iter().map(|r| r.probability).sum()
    }

    #[test]
    fn single_predictor_null_signal() {
        let data = synth(200, vec![0.0, 0.0], vec![1.0], 3);
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        for method in [Method::Laplace, Method::Bic] {
            let t = enumerate_posterior(&data, &spec, method).unwrap();
            assert_eq!(t.rows().len(), 2);
            assert!((total(&t) - 1.0).abs() < 1e-10);
            let single = ModelIndicator::full(1);
            let inc = marginal_inclusion_from_table(&t);
            assert!((inc[0] - t.probability(&single)).abs() < 1e-15);
        }
    }

    #[test]
    fn expensive_variable_is_demoted() {
        let data = synth(300, vec![0.0, 0.5, 0.5, 0.5], vec![1.0, 1.0, 4.0], 11);
        let equal = CostPriorSpec::new(vec![1.0; 3], data.n(), PriorMode::CostBenefit).unwrap();
        let priced = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        for method in [Method::Laplace, Method::Bic] {
            let a =
                marginal_inclusion_from_table(&enumerate_posterior(&data, &equal, method).unwrap());
            let b = marginal_inclusion_from_table(
                &enumerate_posterior(&data, &priced, method).unwrap(),
            );
            assert!(b[2] < a[2], "{method}: {} vs {}", b[2], a[2]);
        }
    }

    #[test]
    fn strong_signal_pair_dominates() {
        let data = synth(
            400,
            vec![0.0, 1.2, -1.0, 0.0, 0.0, 0.0, 0.0],
            vec![1.0; 6],
            5,
        );
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        let t = enumerate_posterior(&data, &spec, Method::Laplace).unwrap();
        assert_eq!(t.rows().len(), 64);
        assert!((total(&t) - 1.0).abs() < 1e-10);
        let best = t.best().model;
        assert!(best.contains(1) && best.contains(2));
        let both: f64 = t
            .rows()
            .iter()
            .filter(|r| r.model.contains(1) && r.model.contains(2))
            .map(|r| r.probability)
            .sum();
        assert!(both > 0.5);
        for w in t.rows().windows(2) {
            assert!(w[0].probability >= w[1].probability);
        }
    }

    #[test]
    fn uniform_table_gives_half() {
        let evals: Vec<Evaluation> = enumerate_all(2)
            .unwrap()
            .map(|m| {
                Evaluation::Scored(crate::evidence::ModelScore {
                    model: m,
                    method: Method::Bic,
                    log_likelihood: -10.0,
                    phi: None,
                    log_model_prior: 0.0,
                    score: 20.0,
                    log_marginal: None,
                    cost: 0.0,
                    dimension: m.dimension(),
                })
            })
            .collect();
        let t = PosteriorTable::from_evaluations(
            2,
            Method::Bic,
            PriorMode::CostBenefit,
            &[1.0, 1.0],
            &evals,
        )
        .unwrap();
        let inc = marginal_inclusion_from_table(&t);
        assert!((inc[0] - 0.5).abs() < 1e-15 && (inc[1] - 0.5).abs() < 1e-15);
        assert_eq!(t.best().model.encoding(), 0);
    }

    #[test]
    fn excluded_models_carry_zero_mass() {
        let n = 120;
        let base = synth(n, vec![0.2, 0.8], vec![1.0], 9);
        let mut x = DMatrix::zeros(n, 2);
        for i in 0..n {
            x[(i, 0)] = base.x()[(i, 1)];
            x[(i, 1)] = base.x()[(i, 1)];
        }
        let data = Dataset::new(
            base.y().as_slice().to_vec(),
            x,
            vec!["a".into(), "b".into()],
            vec![1.0, 1.0],
        )
        .unwrap();
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        let t = enumerate_posterior(&data, &spec, Method::Laplace).unwrap();
        let full = ModelIndicator::full(2);
        let row = t.rows().iter().find(|r| r.model == full).unwrap();
        assert_eq!(row.probability, 0.0);
        assert_eq!(row.exclusion, Some(Exclusion::RankDeficient));
        assert_eq!(t.excluded().count(), 1);
        assert!((total(&t) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn switching_mode_keeps_normalization() {
        let data = synth(
            250,
            vec![-0.3, 0.7, 0.0, 0.4, 0.0],
            vec![1.0, 3.0, 0.5, 2.0],
            21,
        );
        for mode in [PriorMode::CostBenefit, PriorMode::BenefitOnly] {
            let spec = CostPriorSpec::for_dataset(&data, mode).unwrap();
            for method in [Method::Laplace, Method::Bic] {
                let t = enumerate_posterior(&data, &spec, method).unwrap();
                assert!((total(&t) - 1.0).abs() < 1e-10);
                assert_eq!(t.mode(), mode);
            }
        }
    }

    #[test]
    fn equal_cost_bic_ranking_is_classical() {
        let data = synth(300, vec![0.1, 0.6, 0.0, -0.4, 0.2], vec![2.0; 4], 8);
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        let t = enumerate_posterior(&data, &spec, Method::Bic).unwrap();
        let ln_n = (data.n() as f64).ln();
        let mut classical: Vec<(f64, u128)> = enumerate_all(4)
            .unwrap()
            .map(|m| {
                let fit = mle(&m, &data).unwrap();
                (
                    -2.0 * fit.objective + m.dimension() as f64 * ln_n,
                    m.encoding(),
                )
            })
            .collect();
        classical.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let ours: Vec<u128> = t.rows().iter().map(|r| r.model.encoding()).collect();
        let theirs: Vec<u128> = classical.iter().map(|c| c.1).collect();
        assert_eq!(ours, theirs);
    }

    #[test]
    fn csv_export_has_cumulative_column() {
        let data = synth(150, vec![0.0, 0.9, 0.0], vec![1.0, 2.0], 2);
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        let t = enumerate_posterior(&data, &spec, Method::Laplace).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("table.csv");
        t.write_csv(&path).unwrap();
        let mut r = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<csv::StringRecord> = r.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 4);
        let last: f64 = rows[3][5].parse().unwrap();
        assert!((last - 1.0).abs() < 1e-12);
        assert_eq!(&rows[0][0], t.best().model.to_string());
    }

    #[test]
    fn guard_rejects_large_models() {
        let data = synth(100, vec![0.0; 4], vec![1.0; 3], 1);
        let err = quadrature_log_marginal(&ModelIndicator::full(3), &data).unwrap_err();
        assert!(matches!(err, Error::Guard(_)));
    }

    #[test]
    fn constant_likelihood_integrates_prior_to_one() {
        let data = synth(100, vec![0.0, 0.5, -0.5], vec![1.0, 1.0], 4);
        for model in enumerate_all(2).unwrap() {
            let q = quadrature_log_marginal_with(
                &model,
                &data,
                LikelihoodTerm::Constant(-3.25),
                QuadratureOptions::default(),
            )
            .unwrap();
            assert!(
                (q.log_marginal + 3.25).abs() < 1e-8,
                "{model}: {}",
                q.log_marginal
            );
        }
    }

    #[test]
    fn intercept_only_matches_laplace() {
        let data = balanced(100);
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        let model = ModelIndicator::empty(1);
        let q = quadrature_log_marginal(&model, &data).unwrap();
        let laplace = score(&model, &data, &spec, Method::Laplace).unwrap();
        let lm = laplace.scored().unwrap().log_marginal.unwrap();
        assert!(
            (q.log_marginal - lm).abs() < 0.05,
            "{} vs {lm}",
            q.log_marginal
        );
        assert!(q.error_estimate < 1e-4);
    }

    #[test]
    fn refinement_is_stable() {
        let data = synth(100, vec![0.3, 0.8], vec![1.0], 12);
        let model = ModelIndicator::full(1);
        let q = quadrature_log_marginal(&model, &data).unwrap();
        assert!(q.error_estimate < 1e-4);
        let finer = quadrature_log_marginal_with(
            &model,
            &data,
            LikelihoodTerm::Bernoulli,
            QuadratureOptions {
                nodes: Some(801),
                ..Default::default()
            },
        )
        .unwrap();
        assert!((finer.log_marginal - q.log_marginal).abs() < 1e-4);
    }

    #[test]
    fn three_coefficient_model_is_supported() {
        let data = synth(40, vec![0.1, 0.6, -0.4], vec![1.0, 1.0], 6);
        let spec = CostPriorSpec::for_dataset(&data, PriorMode::CostBenefit).unwrap();
        let model = ModelIndicator::full(2);
        let q = quadrature_log_marginal(&model, &data).unwrap();
        let lm = score(&model, &data, &spec, Method::Laplace)
            .unwrap()
            .scored()
            .unwrap()
            .log_marginal
            .unwrap();
        assert_eq!(q.nodes, 201);
        assert!((q.log_marginal - lm).abs() < 0.1);
        assert!(q.error_estimate < 1e-4);
    }
}
