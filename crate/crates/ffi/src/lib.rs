//! C ABI over the `costvs` library.
//!
//! Every entry point returns a [`CostvsStatus`]; outputs go through pointer
//! arguments. Failures leave a message readable with [`costvs_last_error`] on the
//! calling thread. Objects are opaque handles released with their `_free` function.
//! Models are passed as arrays of 1-based predictor indices.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use costvs::priors::log_model_prior;
use costvs::samplers::run_sampler;
use costvs::{
    enumerate_posterior, marginal_inclusion, marginal_inclusion_from_table, CostPriorSpec, Dataset,
    Error, Evaluation, Method, ModelIndicator, PosteriorTable, PriorMode, SamplerConfig,
    SamplerMethod, StartState,
};
use nalgebra::DMatrix;

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostvsStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad option, model, or string argument.
    InvalidArgument = 2,
    /// Input data failed to load or validate.
    DataError = 3,
    /// Rank deficiency, non-convergence, or an aborted sampler.
    NumericalError = 4,
    /// Output buffer shorter than required; the needed length is reported.
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostvsPriorMode {
    CostBenefit = 0,
    BenefitOnly = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostvsMethod {
    Laplace = 0,
    Bic = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostvsSampler {
    Mc3Laplace = 0,
    Mc3Bic = 1,
    Rjmcmc = 2,
}

/// Sampler budget. `iterations` includes `burn_in`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CostvsSamplerOptions {
    pub sampler: CostvsSampler,
    pub iterations: u64,
    pub burn_in: u64,
    pub seed: u64,
    /// Start from the full model instead of the empty one.
    pub start_full: bool,
}

/// Score of one model. Optional fields are NaN when not defined for the method.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CostvsScore {
    /// Set when the model cannot be scored (rank deficient or not converged);
    /// every other field is then NaN or zero.
    pub excluded: bool,
    pub score: f64,
    pub log_likelihood: f64,
    pub log_model_prior: f64,
    pub phi: f64,
    pub log_marginal: f64,
    pub cost: f64,
    pub dimension: u32,
}

/// One row of an enumerated posterior, ordered by probability.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct CostvsTableRow {
    /// Low and high 64 bits of `sum 2^(j-1)` over included predictors `j`.
    pub encoding_lo: u64,
    pub encoding_hi: u64,
    pub dimension: u32,
    pub cost: f64,
    /// NaN for excluded models.
    pub score: f64,
    pub probability: f64,
}

pub struct CostvsDataset {
    inner: Dataset,
}

pub struct CostvsPrior {
    inner: CostPriorSpec,
}

pub struct CostvsTable {
    inner: PosteriorTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(CostvsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.exit_code() {
            1 => CostvsStatus::InvalidArgument,
            3 => CostvsStatus::NumericalError,
            _ => CostvsStatus::DataError,
        };
        Failure(status, e.to_string())
    }
}

fn fail<T>(status: CostvsStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CostvsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CostvsStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CostvsStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().map_or_else(
        || fail(CostvsStatus::NullPointer, format!("{what} is null")),
        Ok,
    )
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return fail(CostvsStatus::NullPointer, format!("{what} is null"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return fail(CostvsStatus::NullPointer, format!("{what} is null"));
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => fail(
            CostvsStatus::InvalidArgument,
            format!("{what} is not UTF-8"),
        ),
    }
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(CostvsStatus::NullPointer, "output pointer is null");
    }
    out.write(value);
    Ok(())
}

/// Copies `values` into `buf` when it fits; always reports the needed length.
unsafe fn write_buffer<T: Copy>(
    values: &[T],
    buf: *mut T,
    cap: usize,
    len_out: *mut usize,
) -> Result<(), Failure> {
    if !len_out.is_null() {
        len_out.write(values.len());
    }
    if values.len() > cap {
        return fail(
            CostvsStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {} needed", values.len()),
        );
    }
    if !values.is_empty() {
        if buf.is_null() {
            return fail(CostvsStatus::NullPointer, "output buffer is null");
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

unsafe fn model(p: usize, indices: *const u32, len: usize) -> Result<ModelIndicator, Failure> {
    let idx: Vec<usize> = slice(indices, len, "indices")?
        .iter()
        .map(|&j| j as usize)
        .collect();
    Ok(ModelIndicator::from_indices(p, &idx)?)
}

unsafe fn boxed<T>(value: T, out: *mut *mut T) -> Result<(), Failure> {
    if out.is_null() {
        return fail(CostvsStatus::NullPointer, "output handle pointer is null");
    }
    out.write(Box::into_raw(Box::new(value)));
    Ok(())
}

/// Message from the most recent failed call on this thread, or null if none has
/// failed. Valid until another call on the same thread fails.
#[no_mangle]
pub extern "C" fn costvs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn costvs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a data CSV (binary response first) and a `name,cost` CSV.
#[no_mangle]
pub unsafe extern "C" fn costvs_dataset_load(
    data_path: *const c_char,
    costs_path: *const c_char,
    out: *mut *mut CostvsDataset,
) -> CostvsStatus {
    guard(|| {
        let data = costvs::load_dataset(
            path(data_path, "data_path")?,
            path(costs_path, "costs_path")?,
        )?;
        boxed(CostvsDataset { inner: data }, out)
    })
}

/// Builds a dataset from memory. `x` is row-major `n x p` without the intercept;
/// predictors are named `X1..Xp`.
#[no_mangle]
pub unsafe extern "C" fn costvs_dataset_new(
    n: usize,
    p: usize,
    y: *const f64,
    x: *const f64,
    costs: *const f64,
    out: *mut *mut CostvsDataset,
) -> CostvsStatus {
    guard(|| {
        let y = slice(y, n, "y")?.to_vec();
        let x = DMatrix::from_row_slice(n, p, slice(x, n * p, "x")?);
        let costs = slice(costs, p, "costs")?.to_vec();
        let names = (1..=p).map(|j| format!("X{j}")).collect();
        let data = Dataset::new(y, x, names, costs)?;
        boxed(CostvsDataset { inner: data }, out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn costvs_dataset_n(data: *const CostvsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n())
}

#[no_mangle]
pub unsafe extern "C" fn costvs_dataset_p(data: *const CostvsDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.p())
}

#[no_mangle]
pub unsafe extern "C" fn costvs_dataset_free(data: *mut CostvsDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Cost prior for `data`, with the cheapest predictor as the baseline cost.
#[no_mangle]
pub unsafe extern "C" fn costvs_prior_new(
    data: *const CostvsDataset,
    mode: CostvsPriorMode,
    out: *mut *mut CostvsPrior,
) -> CostvsStatus {
    guard(|| {
        let data = get(data, "data")?;
        let mode = match mode {
            CostvsPriorMode::CostBenefit => PriorMode::CostBenefit,
            CostvsPriorMode::BenefitOnly => PriorMode::BenefitOnly,
        };
        let spec = CostPriorSpec::for_dataset(&data.inner, mode)?;
        boxed(CostvsPrior { inner: spec }, out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn costvs_prior_free(prior: *mut CostvsPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Normalized log prior probability of a model.
#[no_mangle]
pub unsafe extern "C" fn costvs_log_model_prior(
    prior: *const CostvsPrior,
    indices: *const u32,
    len: usize,
    out: *mut f64,
) -> CostvsStatus {
    guard(|| {
        let prior = get(prior, "prior")?;
        let m = model(prior.inner.p(), indices, len)?;
        write_out(out, log_model_prior(&m, &prior.inner))
    })
}

fn method(m: CostvsMethod) -> Method {
    match m {
        CostvsMethod::Laplace => Method::Laplace,
        CostvsMethod::Bic => Method::Bic,
    }
}

fn check_pair(data: &CostvsDataset, prior: &CostvsPrior) -> Result<(), Failure> {
    if data.inner.p() != prior.inner.p() || data.inner.n() != prior.inner.n() {
        return fail(
            CostvsStatus::InvalidArgument,
            "prior was not built for this dataset",
        );
    }
    Ok(())
}

/// Scores one model.
#[no_mangle]
pub unsafe extern "C" fn costvs_score(
    data: *const CostvsDataset,
    prior: *const CostvsPrior,
    indices: *const u32,
    len: usize,
    evidence: CostvsMethod,
    out: *mut CostvsScore,
) -> CostvsStatus {
    guard(|| {
        let (data, prior) = (get(data, "data")?, get(prior, "prior")?);
        check_pair(data, prior)?;
        let m = model(data.inner.p(), indices, len)?;
        let eval = costvs::evidence::score(&m, &data.inner, &prior.inner, method(evidence))?;
        let result = match eval {
            Evaluation::Scored(s) => CostvsScore {
                excluded: false,
                score: s.score,
                log_likelihood: s.log_likelihood,
                log_model_prior: s.log_model_prior,
                phi: s.phi.unwrap_or(f64::NAN),
                log_marginal: s.log_marginal.unwrap_or(f64::NAN),
                cost: s.cost,
                dimension: s.dimension as u32,
            },
            Evaluation::Excluded { .. } => CostvsScore {
                excluded: true,
                score: f64::NAN,
                log_likelihood: f64::NAN,
                log_model_prior: log_model_prior(&m, &prior.inner),
                phi: f64::NAN,
                log_marginal: f64::NAN,
                cost: m.total_cost(data.inner.costs()),
                dimension: m.dimension() as u32,
            },
        };
        write_out(out, result)
    })
}

/// Exact posterior over all `2^p` models (`p <= 20`).
#[no_mangle]
pub unsafe extern "C" fn costvs_enumerate(
    data: *const CostvsDataset,
    prior: *const CostvsPrior,
    evidence: CostvsMethod,
    out: *mut *mut CostvsTable,
) -> CostvsStatus {
    guard(|| {
        let (data, prior) = (get(data, "data")?, get(prior, "prior")?);
        check_pair(data, prior)?;
        let table = enumerate_posterior(&data.inner, &prior.inner, method(evidence))?;
        boxed(CostvsTable { inner: table }, out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn costvs_table_len(table: *const CostvsTable) -> usize {
    table.as_ref().map_or(0, |t| t.inner.rows().len())
}

/// Row `i` in descending probability order.
#[no_mangle]
pub unsafe extern "C" fn costvs_table_row(
    table: *const CostvsTable,
    i: usize,
    out: *mut CostvsTableRow,
) -> CostvsStatus {
    guard(|| {
        let table = get(table, "table")?;
        let Some(row) = table.inner.rows().get(i) else {
            return fail(
                CostvsStatus::InvalidArgument,
                format!("row {i} out of range"),
            );
        };
        let enc = row.model.encoding();
        write_out(
            out,
            CostvsTableRow {
                encoding_lo: enc as u64,
                encoding_hi: (enc >> 64) as u64,
                dimension: row.dimension as u32,
                cost: row.cost,
                score: row.score.unwrap_or(f64::NAN),
                probability: row.probability,
            },
        )
    })
}

/// Marginal inclusion probabilities (`p` values) from an enumerated posterior.
#[no_mangle]
pub unsafe extern "C" fn costvs_table_marginals(
    table: *const CostvsTable,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> CostvsStatus {
    guard(|| {
        let table = get(table, "table")?;
        write_buffer(
            &marginal_inclusion_from_table(&table.inner),
            buf,
            cap,
            len_out,
        )
    })
}

#[no_mangle]
pub unsafe extern "C" fn costvs_table_free(table: *mut CostvsTable) {
    if !table.is_null() {
        drop(Box::from_raw(table));
    }
}

/// Runs one chain and writes the `p` marginal inclusion estimates.
#[no_mangle]
pub unsafe extern "C" fn costvs_sample_marginals(
    data: *const CostvsDataset,
    prior: *const CostvsPrior,
    options: *const CostvsSamplerOptions,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> CostvsStatus {
    guard(|| {
        let (data, prior, opts) = (
            get(data, "data")?,
            get(prior, "prior")?,
            get(options, "options")?,
        );
        check_pair(data, prior)?;
        let sampler = match opts.sampler {
            CostvsSampler::Mc3Laplace => SamplerMethod::Mc3Laplace,
            CostvsSampler::Mc3Bic => SamplerMethod::Mc3Bic,
            CostvsSampler::Rjmcmc => SamplerMethod::Rjmcmc,
        };
        let start = if opts.start_full {
            StartState::FullModel
        } else {
            StartState::NullModel
        };
        let cfg = SamplerConfig::new(sampler)
            .with_budget(opts.iterations as usize, opts.burn_in as usize)
            .with_seed(opts.seed)
            .with_start(start);
        let out = run_sampler(&data.inner, &prior.inner, &cfg)?;
        write_buffer(&marginal_inclusion(&out)?, buf, cap, len_out)
    })
}
