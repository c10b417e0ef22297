//! Markov chains over model space: MC³ on cached model scores, reversible-jump
//! MCMC on `(γ, β_γ)`, the within-model random walk, and the two-stage search.
//!
//! One iteration is one sweep of `p` single-variable flip proposals. Chain `c` of a
//! run draws from ChaCha8 seeded with the master seed on stream `c`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evidence::{Evaluator, Method, ModeSummary};
use crate::glm::{log_bernoulli, prior_log_density, FitKind, ModelProblem, LN_2PI};
use crate::model_space::{ModelIndicator, ENUMERATION_LIMIT};
use crate::num::fmt_f64;
use crate::oracle::{enumerate_posterior, marginal_inclusion_from_table, PosteriorTable};
use crate::priors::{log_prior_odds, CostPriorSpec};

/// Random-walk scale factor; the proposal covariance is `(RW_SCALE² / d) Ψ_γ`.
pub const RW_SCALE: f64 = 2.38;

/// Default screening threshold for the two-stage search.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

const COEFFICIENT_BATCHES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMethod {
    Mc3Laplace,
    Mc3Bic,
    Rjmcmc,
}

impl SamplerMethod {
    /// Evidence used for acceptance (MC³) or for pilot modes and enumeration (RJMCMC).
    pub fn evidence(&self) -> Method {
        match self {
            SamplerMethod::Mc3Bic => Method::Bic,
            _ => Method::Laplace,
        }
    }

    pub fn is_mc3(&self) -> bool {
        !matches!(self, SamplerMethod::Rjmcmc)
    }
}

impl fmt::Display for SamplerMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SamplerMethod::Mc3Laplace => "mc3_laplace",
            SamplerMethod::Mc3Bic => "mc3_bic",
            SamplerMethod::Rjmcmc => "rjmcmc",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StartState {
    NullModel,
    FullModel,
    Given(ModelIndicator),
}

impl StartState {
    fn resolve(&self, p: usize) -> Result<ModelIndicator> {
        match *self {
            StartState::NullModel => Ok(ModelIndicator::empty(p)),
            StartState::FullModel => Ok(ModelIndicator::full(p)),
            StartState::Given(m) if m.p() == p => Ok(m),
            StartState::Given(m) => Err(Error::InvalidSampler(format!(
                "start model is over {} predictors, dataset has {p}",
                m.p()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scan {
    Systematic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub method: SamplerMethod,
    /// Sweeps, burn-in included.
    pub iterations: usize,
    pub burn_in: usize,
    pub seed: u64,
    pub start: StartState,
    pub scan: Scan,
    pub chains: usize,
    /// Random-walk refreshes of `β_γ` after each RJMCMC model move.
    pub within_model_updates: usize,
}

impl SamplerConfig {
    /// Defaults: 10,000 sweeps after 1,000 burn-in for MC³, 100,000 after 10,000 for RJMCMC.
    pub fn new(method: SamplerMethod) -> Self {
        let (iterations, burn_in) = if method.is_mc3() {
            (11_000, 1_000)
        } else {
            (110_000, 10_000)
        };
        SamplerConfig {
            method,
            iterations,
            burn_in,
            seed: 1,
            start: StartState::NullModel,
            scan: Scan::Systematic,
            chains: 1,
            within_model_updates: 1,
        }
    }

    pub fn with_budget(mut self, iterations: usize, burn_in: usize) -> Self {
        self.iterations = iterations;
        self.burn_in = burn_in;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_start(mut self, start: StartState) -> Self {
        self.start = start;
        self
    }

    pub fn with_scan(mut self, scan: Scan) -> Self {
        self.scan = scan;
        self
    }

    pub fn with_chains(mut self, chains: usize) -> Self {
        self.chains = chains;
        self
    }

    /// Post-burn-in sweeps per chain.
    pub fn kept(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in)
    }

    /// `iterations == burn_in` is allowed and yields an empty output.
    pub fn validate(&self) -> Result<()> {
        if self.iterations < self.burn_in {
            return Err(Error::InvalidSampler(format!(
                "iterations ({}) must not be smaller than burn-in ({})",
                self.iterations, self.burn_in
            )));
        }
        if self.chains == 0 {
            return Err(Error::InvalidSampler(
                "at least one chain is required".into(),
            ));
        }
        Ok(())
    }
}

fn chain_rng(seed: u64, chain: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain as u64);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub seed: u64,
    /// ChaCha stream index.
    pub stream: u64,
    pub start: ModelIndicator,
    pub proposals: u64,
    pub accepted: u64,
    pub acceptance_rate: f64,
    /// RJMCMC random-walk refreshes.
    pub within_proposals: u64,
    pub within_accepted: u64,
}

/// Batch-wise running sums of `β_γ` for one model, for means with batch-means errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoefficientMoments {
    counts: Vec<u64>,
    sums: Vec<Vec<f64>>,
}

impl CoefficientMoments {
    fn new(d: usize) -> Self {
        CoefficientMoments {
            counts: vec![0; COEFFICIENT_BATCHES],
            sums: vec![vec![0.0; d]; COEFFICIENT_BATCHES],
        }
    }

    fn add(&mut self, batch: usize, beta: &DVector<f64>) {
        self.counts[batch] += 1;
        for (s, b) in self.sums[batch].iter_mut().zip(beta.iter()) {
            *s += b;
        }
    }

    fn merge(&mut self, other: &CoefficientMoments) {
        for b in 0..COEFFICIENT_BATCHES {
            self.counts[b] += other.counts[b];
            for (s, o) in self.sums[b].iter_mut().zip(&other.sums[b]) {
                *s += o;
            }
        }
    }

    pub fn count(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn mean(&self) -> DVector<f64> {
        let d = self.sums[0].len();
        let total = self.count() as f64;
        DVector::from_fn(d, |k, _| {
            self.sums.iter().map(|s| s[k]).sum::<f64>() / total
        })
    }

    /// Standard error of [`Self::mean`] from the spread of non-empty batch means.
    pub fn batch_standard_error(&self) -> DVector<f64> {
        let d = self.sums[0].len();
        let batches: Vec<usize> = (0..COEFFICIENT_BATCHES)
            .filter(|&b| self.counts[b] > 0)
            .collect();
        let m = batches.len() as f64;
        DVector::from_fn(d, |k, _| {
            if batches.len() < 2 {
                return f64::INFINITY;
            }
            let means: Vec<f64> = batches
                .iter()
                .map(|&b| self.sums[b][k] / self.counts[b] as f64)
                .collect();
            let mu = means.iter().sum::<f64>() / m;
            let var = means.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (m - 1.0);
            (var / m).sqrt()
        })
    }
}

/// One ergodic-mean trace row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TracePoint {
    /// Sweep number, counted from the start of the chain (1-based).
    pub iteration: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainOutput {
    p: usize,
    method: SamplerMethod,
    iterations: usize,
    burn_in: usize,
    seed: u64,
    chains: Vec<ChainSummary>,
    visits: BTreeMap<u128, u64>,
    /// Post-burn-in states of each chain, as encodings.
    #[serde(skip)]
    histories: Vec<Vec<u128>>,
    #[serde(skip)]
    coefficients: BTreeMap<u128, CoefficientMoments>,
}

impl ChainOutput {
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn method(&self) -> SamplerMethod {
        self.method
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn chains(&self) -> &[ChainSummary] {
        &self.chains
    }

    pub fn histories(&self) -> &[Vec<u128>] {
        &self.histories
    }

    /// Pooled visit counts keyed by `m(γ)`.
    pub fn visits(&self) -> &BTreeMap<u128, u64> {
        &self.visits
    }

    pub fn total_kept(&self) -> u64 {
        self.visits.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total_kept() == 0
    }

    /// Model-move acceptance rate pooled over chains.
    pub fn acceptance_rate(&self) -> f64 {
        let prop: u64 = self.chains.iter().map(|c| c.proposals).sum();
        let acc: u64 = self.chains.iter().map(|c| c.accepted).sum();
        if prop == 0 {
            0.0
        } else {
            acc as f64 / prop as f64
        }
    }

    /// Visit frequency of `model`.
    pub fn frequency(&self, model: &ModelIndicator) -> Result<f64> {
        let total = self.total_kept();
        if total == 0 {
            return Err(Error::EmptyChain);
        }
        Ok(*self.visits.get(&model.encoding()).unwrap_or(&0) as f64 / total as f64)
    }

    /// Visited models with count and frequency, most visited first.
    pub fn visit_table(&self) -> Result<Vec<(ModelIndicator, u64, f64)>> {
        let total = self.total_kept();
        if total == 0 {
            return Err(Error::EmptyChain);
        }
        let mut rows: Vec<_> = self
            .visits
            .iter()
            .map(|(&e, &c)| {
                let m = ModelIndicator::from_encoding(self.p, e).expect("visited encoding fits p");
                (m, c, c as f64 / total as f64)
            })
            .collect();
        rows.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.encoding().cmp(&b.0.encoding())));
        Ok(rows)
    }

    /// RJMCMC coefficient averages for `model`.
    pub fn coefficient_moments(&self, model: &ModelIndicator) -> Option<&CoefficientMoments> {
        self.coefficients.get(&model.encoding())
    }

    fn kept_len(&self) -> usize {
        self.histories.first().map_or(0, |h| h.len())
    }

    fn stride_points(&self, stride: usize) -> Vec<usize> {
        let len = self.kept_len();
        let stride = stride.max(1);
        (0..len)
            .filter(|k| (k + 1) % stride == 0 || k + 1 == len)
            .collect()
    }

    /// Running inclusion means pooled over chains, reported every `stride` kept sweeps.
    pub fn inclusion_trace(&self, stride: usize) -> Result<Vec<TracePoint>> {
        let models: Vec<u128> = (0..self.p).map(|j| 1u128 << j).collect();
        self.running_means(
            stride,
            |state, out| {
                for (v, bit) in out.iter_mut().zip(&models) {
                    if state & bit != 0 {
                        *v += 1.0;
                    }
                }
            },
            self.p,
        )
    }

    /// Running visit frequencies of the given models.
    pub fn model_trace(&self, models: &[ModelIndicator], stride: usize) -> Result<Vec<TracePoint>> {
        let enc: Vec<u128> = models.iter().map(|m| m.encoding()).collect();
        self.running_means(
            stride,
            |state, out| {
                for (v, e) in out.iter_mut().zip(&enc) {
                    if state == *e {
                        *v += 1.0;
                    }
                }
            },
            enc.len(),
        )
    }

    fn running_means(
        &self,
        stride: usize,
        add: impl Fn(u128, &mut [f64]),
        width: usize,
    ) -> Result<Vec<TracePoint>> {
        if self.is_empty() {
            return Err(Error::EmptyChain);
        }
        let points = self.stride_points(stride);
        let mut sums = vec![0.0; width];
        let mut out = Vec::with_capacity(points.len());
        let mut next = points.iter().peekable();
        let chains = self.histories.len() as f64;
        for k in 0..self.kept_len() {
            for h in &self.histories {
                add(h[k], &mut sums);
            }
            if next.peek() == Some(&&k) {
                next.next();
                let denom = chains * (k + 1) as f64;
                out.push(TracePoint {
                    iteration: self.burn_in + k + 1,
                    values: sums.iter().map(|s| s / denom).collect(),
                });
            }
        }
        Ok(out)
    }

    /// `model,count,frequency`.
    pub fn write_visits_csv(&self, path: impl AsRef<Path>, names: Option<&[String]>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model", "count", "frequency"])?;
        for (m, c, f) in self.visit_table()? {
            let label = match names {
                Some(n) => m.notation_with(n),
                None => m.to_string(),
            };
            w.write_record([label, c.to_string(), fmt_f64(f)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `variable,estimate`.
    pub fn write_marginals_csv(&self, path: impl AsRef<Path>, names: &[String]) -> Result<()> {
        let path = path.as_ref();
        let est = marginal_inclusion(self)?;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["variable", "estimate"])?;
        for (name, v) in names.iter().zip(est) {
            w.write_record([name.clone(), fmt_f64(v)])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// `iteration,<variable>...` with running inclusion means.
    pub fn write_trace_csv(
        &self,
        path: impl AsRef<Path>,
        names: &[String],
        stride: usize,
    ) -> Result<()> {
        let path = path.as_ref();
        let trace = self.inclusion_trace(stride)?;
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["iteration".to_string()];
        header.extend(names.iter().cloned());
        w.write_record(&header)?;
        for t in trace {
            let mut rec = vec![t.iteration.to_string()];
            rec.extend(t.values.iter().map(|v| fmt_f64(*v)));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Fraction of post-burn-in states that include each predictor.
pub fn marginal_inclusion(out: &ChainOutput) -> Result<Vec<f64>> {
    let total = out.total_kept();
    if total == 0 {
        return Err(Error::EmptyChain);
    }
    let mut est = vec![0.0; out.p];
    for (&e, &c) in &out.visits {
        for (j, v) in est.iter_mut().enumerate() {
            if e >> j & 1 == 1 {
                *v += c as f64;
            }
        }
    }
    Ok(est.into_iter().map(|v| v / total as f64).collect())
}

/// Total-variation distance between visit frequencies and an exact table.
pub fn total_variation(out: &ChainOutput, table: &PosteriorTable) -> Result<f64> {
    let total = out.total_kept();
    if total == 0 {
        return Err(Error::EmptyChain);
    }
    let mut tv = 0.0;
    for row in table.rows() {
        let f = *out.visits.get(&row.model.encoding()).unwrap_or(&0) as f64 / total as f64;
        tv += (f - row.probability).abs();
    }
    // Visited models missing from the table.
    for (&e, &c) in &out.visits {
        if !table.rows().iter().any(|r| r.model.encoding() == e) {
            tv += c as f64 / total as f64;
        }
    }
    Ok(0.5 * tv)
}

struct ChainRun {
    summary: ChainSummary,
    history: Vec<u128>,
    coefficients: BTreeMap<u128, CoefficientMoments>,
}

fn pick(rng: &mut ChaCha8Rng, scan: Scan, step: usize, p: usize) -> usize {
    match scan {
        Scan::Systematic => step + 1,
        Scan::Random => rng.random_range(1..=p),
    }
}

fn accept(rng: &mut ChaCha8Rng, log_ratio: f64) -> bool {
    let u: f64 = rng.random();
    u.ln() < log_ratio
}

fn assemble(cfg: &SamplerConfig, p: usize, runs: Vec<ChainRun>) -> ChainOutput {
    let mut visits = BTreeMap::new();
    let mut coefficients: BTreeMap<u128, CoefficientMoments> = BTreeMap::new();
    let mut chains = Vec::new();
    let mut histories = Vec::new();
    for run in runs {
        for &e in &run.history {
            *visits.entry(e).or_insert(0) += 1;
        }
        for (e, m) in run.coefficients {
            match coefficients.get_mut(&e) {
                Some(acc) => acc.merge(&m),
                None => {
                    coefficients.insert(e, m);
                }
            }
        }
        chains.push(run.summary);
        histories.push(run.history);
    }
    ChainOutput {
        p,
        method: cfg.method,
        iterations: cfg.iterations,
        burn_in: cfg.burn_in,
        seed: cfg.seed,
        chains,
        visits,
        histories,
        coefficients,
    }
}

fn summary(cfg: &SamplerConfig, chain: usize, start: ModelIndicator) -> ChainSummary {
    ChainSummary {
        chain,
        seed: cfg.seed,
        stream: chain as u64,
        start,
        proposals: 0,
        accepted: 0,
        acceptance_rate: 0.0,
        within_proposals: 0,
        within_accepted: 0,
    }
}

fn finish(mut s: ChainSummary) -> ChainSummary {
    s.acceptance_rate = if s.proposals == 0 {
        0.0
    } else {
        s.accepted as f64 / s.proposals as f64
    };
    s
}

fn abort_if_stuck(eval: &Evaluator, start: &ModelIndicator, method: Method) -> Result<()> {
    if eval.evaluate(start, method)?.scored().is_some() {
        return Ok(());
    }
    for j in 1..=start.p() {
        if eval.evaluate(&start.flip(j)?, method)?.scored().is_some() {
            return Ok(());
        }
    }
    Err(Error::SamplerAborted(format!(
        "start model {start} and all of its single-flip neighbours are excluded \
         (singular design or divergent fits)"
    )))
}

/// Metropolized single-flip MC³ using cached Laplace or cost-adjusted BIC odds.
pub fn run_mc3(data: &Dataset, spec: &CostPriorSpec, cfg: &SamplerConfig) -> Result<ChainOutput> {
    let eval = Evaluator::new(data, spec)?;
    run_mc3_with(&eval, cfg)
}

pub fn run_mc3_with(eval: &Evaluator, cfg: &SamplerConfig) -> Result<ChainOutput> {
    if !cfg.method.is_mc3() {
        return Err(Error::InvalidSampler(format!(
            "run_mc3 needs an mc3 method, got {}",
            cfg.method
        )));
    }
    cfg.validate()?;
    let p = eval.data().p();
    let start = cfg.start.resolve(p)?;
    let method = cfg.method.evidence();
    abort_if_stuck(eval, &start, method)?;
    let runs = (0..cfg.chains)
        .into_par_iter()
        .map(|c| mc3_chain(eval, cfg, c, start, method))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cfg, p, runs))
}

fn mc3_chain(
    eval: &Evaluator,
    cfg: &SamplerConfig,
    chain: usize,
    start: ModelIndicator,
    method: Method,
) -> Result<ChainRun> {
    let p = start.p();
    let mut rng = chain_rng(cfg.seed, chain);
    let mut current = start;
    let mut current_eval = eval.evaluate(&current, method)?;
    let mut s = summary(cfg, chain, start);
    let mut history = Vec::with_capacity(cfg.kept());
    for it in 0..cfg.iterations {
        for step in 0..p {
            let j = pick(&mut rng, cfg.scan, step, p);
            let proposal = current.flip(j)?;
            let proposal_eval = eval.evaluate(&proposal, method)?;
            let odds = crate::evidence::PosteriorOdds::between(&proposal_eval, &current_eval);
            s.proposals += 1;
            if accept(&mut rng, odds.log()) {
                s.accepted += 1;
                current = proposal;
                current_eval = proposal_eval;
            }
        }
        if it >= cfg.burn_in {
            history.push(current.encoding());
        }
    }
    Ok(ChainRun {
        summary: finish(s),
        history,
        coefficients: BTreeMap::new(),
    })
}

/// Joint `(γ, β_γ)` state of the reversible-jump chain.
struct JointState {
    model: ModelIndicator,
    columns: Vec<usize>,
    beta: DVector<f64>,
    eta: DVector<f64>,
    log_lik: f64,
    log_coef_prior: f64,
    mode: Arc<ModeSummary>,
}

struct Rj<'a> {
    eval: &'a Evaluator<'a>,
    x: &'a DMatrix<f64>,
    y: &'a DVector<f64>,
    n: usize,
}

impl Rj<'_> {
    fn log_lik(&self, eta: &DVector<f64>) -> f64 {
        (0..self.n).map(|i| log_bernoulli(self.y[i], eta[i])).sum()
    }

    fn eta(&self, columns: &[usize], beta: &DVector<f64>) -> DVector<f64> {
        let mut eta = DVector::zeros(self.n);
        for (k, &c) in columns.iter().enumerate() {
            eta.axpy(beta[k], &self.x.column(c), 1.0);
        }
        eta
    }

    fn state(
        &self,
        model: ModelIndicator,
        mode: Arc<ModeSummary>,
        beta: DVector<f64>,
    ) -> JointState {
        let columns = model.columns();
        let eta = self.eta(&columns, &beta);
        JointState {
            log_lik: self.log_lik(&eta),
            log_coef_prior: prior_log_density(&beta, &mode.gram, mode.gram_log_det, self.n),
            model,
            columns,
            beta,
            eta,
            mode,
        }
    }

    /// Single-flip birth or death of predictor `j`. Returns whether it was accepted.
    fn model_move(&self, st: &mut JointState, j: usize, rng: &mut ChaCha8Rng) -> Result<bool> {
        let proposal = st.model.flip(j)?;
        let Some(prop_mode) = self.eval.mode(&proposal)? else {
            // Keep the random stream aligned with the scored branch.
            let _: f64 = rng.sample(StandardNormal);
            let _: f64 = rng.random();
            return Ok(false);
        };
        let birth = proposal.contains(j);
        let prop_columns = proposal.columns();
        let xj = self.x.column(j);
        // Pilot density for the coefficient of `j`, always from the larger model's mode.
        let (pilot, k) = if birth {
            (
                &prop_mode,
                prop_columns.iter().position(|&c| c == j).unwrap(),
            )
        } else {
            (&st.mode, st.columns.iter().position(|&c| c == j).unwrap())
        };
        let mu = pilot.fit.beta[k];
        let sd = pilot.psi[(k, k)].sqrt();
        let z: f64 = rng.sample(StandardNormal);
        let (beta, eta, coef) = if birth {
            let b = mu + sd * z;
            let beta = st.beta.clone().insert_row(k, b);
            let mut eta = st.eta.clone();
            eta.axpy(b, &xj, 1.0);
            (beta, eta, b)
        } else {
            let b = st.beta[k];
            let beta = st.beta.clone().remove_row(k);
            let mut eta = st.eta.clone();
            eta.axpy(-b, &xj, 1.0);
            (beta, eta, b)
        };
        let u = (coef - mu) / sd;
        let log_q = -0.5 * LN_2PI - sd.ln() - 0.5 * u * u;
        let log_lik = self.log_lik(&eta);
        let log_coef_prior =
            prior_log_density(&beta, &prop_mode.gram, prop_mode.gram_log_det, self.n);
        let mut log_ratio = log_lik + log_coef_prior - st.log_lik - st.log_coef_prior
            + log_prior_odds(&proposal, &st.model, self.eval.spec());
        log_ratio += if birth { -log_q } else { log_q };
        if accept(rng, log_ratio) {
            *st = JointState {
                model: proposal,
                columns: prop_columns,
                beta,
                eta,
                log_lik,
                log_coef_prior,
                mode: prop_mode,
            };
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn refresh(&self, st: &mut JointState, rng: &mut ChaCha8Rng) -> bool {
        let d = st.beta.len();
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let delta = &st.mode.psi_chol * z * (RW_SCALE / (d as f64).sqrt());
        let beta = &st.beta + &delta;
        let mut eta = st.eta.clone();
        for (k, &c) in st.columns.iter().enumerate() {
            eta.axpy(delta[k], &self.x.column(c), 1.0);
        }
        let log_lik = self.log_lik(&eta);
        let log_coef_prior = prior_log_density(&beta, &st.mode.gram, st.mode.gram_log_det, self.n);
        let log_ratio = log_lik + log_coef_prior - st.log_lik - st.log_coef_prior;
        if accept(rng, log_ratio) {
            st.beta = beta;
            st.eta = eta;
            st.log_lik = log_lik;
            st.log_coef_prior = log_coef_prior;
            true
        } else {
            false
        }
    }

    /// Recomputes `η` and the log-densities from `β` to stop rounding drift.
    fn resync(&self, st: &mut JointState) {
        st.eta = self.eta(&st.columns, &st.beta);
        st.log_lik = self.log_lik(&st.eta);
        st.log_coef_prior =
            prior_log_density(&st.beta, &st.mode.gram, st.mode.gram_log_det, self.n);
    }
}

/// Reversible-jump sampler over `(γ, β_γ)` with single-flip birth/death moves.
pub fn run_rjmcmc(
    data: &Dataset,
    spec: &CostPriorSpec,
    cfg: &SamplerConfig,
) -> Result<ChainOutput> {
    let eval = Evaluator::new(data, spec)?;
    run_rjmcmc_with(&eval, cfg)
}

pub fn run_rjmcmc_with(eval: &Evaluator, cfg: &SamplerConfig) -> Result<ChainOutput> {
    if cfg.method != SamplerMethod::Rjmcmc {
        return Err(Error::InvalidSampler(format!(
            "run_rjmcmc needs the rjmcmc method, got {}",
            cfg.method
        )));
    }
    cfg.validate()?;
    let p = eval.data().p();
    let requested = cfg.start.resolve(p)?;
    abort_if_stuck(eval, &requested, Method::Laplace)?;
    // Joint chains need a scored start; fall back to the first scored neighbour.
    let start = if eval.mode(&requested)?.is_some() {
        requested
    } else {
        let mut found = None;
        for j in 1..=p {
            let m = requested.flip(j)?;
            if eval.mode(&m)?.is_some() {
                found = Some(m);
                break;
            }
        }
        let m = found.expect("abort_if_stuck guarantees a scored neighbour");
        log::warn!("start model {requested} is excluded; starting from {m}");
        m
    };
    let runs = (0..cfg.chains)
        .into_par_iter()
        .map(|c| rj_chain(eval, cfg, c, start))
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(cfg, p, runs))
}

fn rj_chain(
    eval: &Evaluator,
    cfg: &SamplerConfig,
    chain: usize,
    start: ModelIndicator,
) -> Result<ChainRun> {
    let data = eval.data();
    let p = data.p();
    let rj = Rj {
        eval,
        x: data.x(),
        y: data.y(),
        n: data.n(),
    };
    let mut rng = chain_rng(cfg.seed, chain);
    let mode = eval.mode(&start)?.expect("start model is scored");
    let beta = mode.fit.beta.clone();
    let mut st = rj.state(start, mode, beta);
    let mut s = summary(cfg, chain, start);
    let mut history = Vec::with_capacity(cfg.kept());
    let mut coefficients: BTreeMap<u128, CoefficientMoments> = BTreeMap::new();
    let kept = cfg.kept();
    for it in 0..cfg.iterations {
        for step in 0..p {
            let j = pick(&mut rng, cfg.scan, step, p);
            s.proposals += 1;
            if rj.model_move(&mut st, j, &mut rng)? {
                s.accepted += 1;
            }
            for _ in 0..cfg.within_model_updates {
                s.within_proposals += 1;
                if rj.refresh(&mut st, &mut rng) {
                    s.within_accepted += 1;
                }
            }
        }
        if p == 0 {
            for _ in 0..cfg.within_model_updates {
                s.within_proposals += 1;
                if rj.refresh(&mut st, &mut rng) {
                    s.within_accepted += 1;
                }
            }
        }
        rj.resync(&mut st);
        if it >= cfg.burn_in {
            let k = it - cfg.burn_in;
            history.push(st.model.encoding());
            let batch = k * COEFFICIENT_BATCHES / kept;
            coefficients
                .entry(st.model.encoding())
                .or_insert_with(|| CoefficientMoments::new(st.beta.len()))
                .add(batch, &st.beta);
        }
    }
    Ok(ChainRun {
        summary: finish(s),
        history,
        coefficients,
    })
}

/// Dispatches on `cfg.method`.
pub fn run_sampler(
    data: &Dataset,
    spec: &CostPriorSpec,
    cfg: &SamplerConfig,
) -> Result<ChainOutput> {
    let eval = Evaluator::new(data, spec)?;
    run_sampler_with(&eval, cfg)
}

pub fn run_sampler_with(eval: &Evaluator, cfg: &SamplerConfig) -> Result<ChainOutput> {
    if cfg.method.is_mc3() {
        run_mc3_with(eval, cfg)
    } else {
        run_rjmcmc_with(eval, cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WithinModelConfig {
    pub burn_in: usize,
    pub draws: usize,
    /// Random-walk steps per kept draw.
    pub thin: usize,
    pub seed: u64,
}

impl Default for WithinModelConfig {
    fn default() -> Self {
        WithinModelConfig {
            burn_in: 2_000,
            draws: 10_000,
            thin: 5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WithinModelDraws {
    pub model: ModelIndicator,
    pub config: WithinModelConfig,
    pub draws: Vec<DVector<f64>>,
    pub acceptance_rate: f64,
    /// Posterior mode the chain started from.
    pub mode: DVector<f64>,
}

/// Random-walk Metropolis on `β_γ` for a fixed model, proposal covariance `(2.38²/d) Ψ_γ`.
pub fn sample_within_model(
    model: &ModelIndicator,
    data: &Dataset,
    cfg: &WithinModelConfig,
) -> Result<WithinModelDraws> {
    if cfg.thin == 0 {
        return Err(Error::InvalidSampler("thin must be at least 1".into()));
    }
    let problem = ModelProblem::new(model, data)?;
    let fit = problem.fit(FitKind::PosteriorMode, None);
    if !fit.converged {
        return Err(Error::NotConverged {
            model: model.to_string(),
        });
    }
    let psi = fit
        .neg_hessian
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("Ψ⁻¹ of {model} is not positive definite")))?
        .inverse();
    let chol = psi
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("Ψ of {model} is not positive definite")))?
        .l();
    let d = fit.beta.len();
    let scale = RW_SCALE / (d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut beta = fit.beta.clone();
    let mut eta = problem.linear_predictor(&beta);
    let mut log_lik = problem.log_likelihood_eta(&eta);
    let mut log_prior = problem.log_prior(&beta);
    let mut accepted = 0u64;
    let steps = cfg.burn_in + cfg.draws * cfg.thin;
    let mut draws = Vec::with_capacity(cfg.draws);
    for t in 0..steps {
        let z = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let delta = &chol * z * scale;
        let cand = &beta + &delta;
        let cand_eta = &eta + &problem.x * &delta;
        let cand_ll = problem.log_likelihood_eta(&cand_eta);
        let cand_lp = problem.log_prior(&cand);
        if accept(&mut rng, cand_ll + cand_lp - log_lik - log_prior) {
            beta = cand;
            eta = cand_eta;
            log_lik = cand_ll;
            log_prior = cand_lp;
            accepted += 1;
        }
        if t >= cfg.burn_in && (t - cfg.burn_in + 1) % cfg.thin == 0 {
            draws.push(beta.clone());
        }
    }
    Ok(WithinModelDraws {
        model: *model,
        config: *cfg,
        draws,
        acceptance_rate: accepted as f64 / steps.max(1) as f64,
        mode: fit.beta,
    })
}

/// Stage-two posterior: exact when the reduced space is small enough, sampled otherwise.
#[derive(Debug, Clone)]
pub enum StageTwo {
    Enumerated(PosteriorTable),
    Sampled(ChainOutput),
}

#[derive(Debug, Clone)]
pub struct TwoStageResult {
    pub threshold: f64,
    pub stage_one: ChainOutput,
    pub stage_one_marginals: Vec<f64>,
    /// 1-based indices (in the full space) of the retained predictors.
    pub reduced: Vec<usize>,
    pub stage_two: StageTwo,
    pub warnings: Vec<String>,
}

impl TwoStageResult {
    /// Maps a stage-two model over the reduced space back to the full space.
    pub fn lift(&self, reduced_model: &ModelIndicator) -> ModelIndicator {
        let p = self.stage_one.p();
        let idx: Vec<usize> = reduced_model
            .indices()
            .into_iter()
            .map(|k| self.reduced[k - 1])
            .collect();
        ModelIndicator::from_indices(p, &idx).expect("reduced indices lie in the full space")
    }

    /// Stage-two inclusion probabilities in full-space positions (0 for screened-out variables).
    pub fn stage_two_marginals(&self) -> Result<Vec<f64>> {
        let reduced = match &self.stage_two {
            StageTwo::Enumerated(t) => marginal_inclusion_from_table(t),
            StageTwo::Sampled(c) => marginal_inclusion(c)?,
        };
        let mut out = vec![0.0; self.stage_one.p()];
        for (k, &j) in self.reduced.iter().enumerate() {
            out[j - 1] = reduced[k];
        }
        Ok(out)
    }

    /// Highest-probability stage-two model in full-space coordinates.
    pub fn top_model(&self) -> Result<ModelIndicator> {
        let reduced = match &self.stage_two {
            StageTwo::Enumerated(t) => t.best().model,
            StageTwo::Sampled(c) => c.visit_table()?[0].0,
        };
        Ok(self.lift(&reduced))
    }
}

/// Screens predictors by stage-one marginal inclusion `≥ threshold`, then re-runs on
/// the reduced space. The reduced problem keeps the full-space baseline cost and `n`.
pub fn two_stage_search(
    data: &Dataset,
    spec: &CostPriorSpec,
    cfg: &SamplerConfig,
    threshold: f64,
) -> Result<TwoStageResult> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::InvalidSampler(format!(
            "threshold {threshold} must lie strictly between 0 and 1"
        )));
    }
    let eval = Evaluator::new(data, spec)?;
    let stage_one = run_sampler_with(&eval, cfg)?;
    let stage_one_marginals = marginal_inclusion(&stage_one)?;
    let reduced: Vec<usize> = stage_one_marginals
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= threshold)
        .map(|(j, _)| j + 1)
        .collect();
    let mut warnings = Vec::new();
    if reduced.is_empty() {
        let msg = format!(
            "no predictor reached marginal inclusion {threshold}; stage two is the intercept-only model"
        );
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let sub_data = data.select(&reduced)?;
    let sub_spec = spec.restrict(&reduced)?;
    let stage_two = if reduced.len() <= ENUMERATION_LIMIT {
        StageTwo::Enumerated(enumerate_posterior(
            &sub_data,
            &sub_spec,
            cfg.method.evidence(),
        )?)
    } else {
        let mut sub_cfg = *cfg;
        sub_cfg.start = match cfg.start {
            StartState::Given(m) => StartState::Given(ModelIndicator::from_indices(
                reduced.len(),
                &reduced
                    .iter()
                    .enumerate()
                    .filter(|(_, &j)| m.contains(j))
                    .map(|(k, _)| k + 1)
                    .collect::<Vec<_>>(),
            )?),
            other => other,
        };
        StageTwo::Sampled(run_sampler(&sub_data, &sub_spec, &sub_cfg)?)
    };
    Ok(TwoStageResult {
        threshold,
        stage_one,
        stage_one_marginals,
        reduced,
        stage_two,
        warnings,
    })
}
