//! Command-line front-end: `enumerate`, `search`, `score` and `simulate`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use crate::dataset::{load_dataset, synthesize, Dataset, SyntheticSpec};
use crate::diagnostics::diagnose;
use crate::error::{Error, Result};
use crate::evidence::{score, Evaluation, Evaluator, Method};
use crate::model_space::ModelIndicator;
use crate::oracle::{enumerate_posterior, marginal_inclusion_from_table};
use crate::priors::{CostPriorSpec, PriorMode};
use crate::report::{
    object, DiagnosticsRow, MarginalRow, ModelRow, ReportFormat, RunReport, ScoreBlock,
};
use crate::samplers::{
    two_stage_search, SamplerConfig, SamplerMethod, Scan, StageTwo, StartState, WithinModelConfig,
    DEFAULT_THRESHOLD,
};

#[derive(Debug, Parser)]
#[command(
    name = "costvs",
    version,
    about = "Cost-aware Bayesian variable selection for binary outcomes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Exact posterior over all 2^p models (p <= 20).
    Enumerate(EnumerateArgs),
    /// Two-stage MCMC search: screen by marginal inclusion, then refine.
    Search(SearchArgs),
    /// Evidence and fit diagnostics for one model.
    Score(ScoreArgs),
    /// Write a synthetic dataset and cost file from a TOML recipe.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    BenefitOnly,
    CostBenefit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Laplace,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SamplerArg {
    Mc3,
    Rjmcmc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StartArg {
    Null,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ScanArg {
    Systematic,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Data CSV: binary response in the first column, predictors after it.
    #[arg(long)]
    pub data: PathBuf,
    /// Cost CSV with `name,cost` rows.
    #[arg(long)]
    pub costs: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::CostBenefit)]
    pub mode: ModeArg,
    #[arg(long, value_enum, default_value_t = MethodArg::Laplace)]
    pub method: MethodArg,
    /// Center and scale predictors before fitting.
    #[arg(long)]
    pub standardize: bool,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
    /// Report path; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiagnosticArgs {
    /// Number of top models to run fit diagnostics on.
    #[arg(long, default_value_t = 1)]
    pub diagnose: usize,
    /// Kept within-model draws per diagnosed model.
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long = "diag-burnin", default_value_t = 2_000)]
    pub diag_burnin: usize,
    /// Random-walk steps per kept draw.
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
}

#[derive(Debug, Args)]
pub struct EnumerateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long = "top-k", default_value_t = 10)]
    pub top_k: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[command(flatten)]
    pub diag: DiagnosticArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SearchArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, value_enum, default_value_t = SamplerArg::Mc3)]
    pub sampler: SamplerArg,
    /// Monitoring sweeps after burn-in [default: 10000 for mc3, 100000 for rjmcmc].
    #[arg(long)]
    pub iters: Option<usize>,
    /// Burn-in sweeps [default: 1000 for mc3, 10000 for rjmcmc].
    #[arg(long)]
    pub burnin: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub chains: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long, value_enum, default_value_t = StartArg::Null)]
    pub start: StartArg,
    #[arg(long, value_enum, default_value_t = ScanArg::Systematic)]
    pub scan: ScanArg,
    #[arg(long = "top-k", default_value_t = 10)]
    pub top_k: usize,
    /// Keep every n-th sweep in the trace CSV.
    #[arg(long = "trace-stride", default_value_t = 10)]
    pub trace_stride: usize,
    #[command(flatten)]
    pub diag: DiagnosticArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model notation, e.g. `X1+X3` or `age+bun`; `X0` is intercept-only.
    #[arg(long)]
    pub model: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 10_000)]
    pub draws: usize,
    #[arg(long = "diag-burnin", default_value_t = 2_000)]
    pub diag_burnin: usize,
    #[arg(long, default_value_t = 5)]
    pub thin: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// TOML recipe (n, p, beta, costs, correlations, names, seed).
    #[arg(long)]
    pub spec: PathBuf,
    /// Overrides the recipe's seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "out-data")]
    pub out_data: PathBuf,
    #[arg(long = "out-costs")]
    pub out_costs: PathBuf,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Enumerate(a) => {
            let report = cmd_enumerate(a)?;
            emit(&report, &a.output)
        }
        Command::Search(a) => {
            let report = cmd_search(a)?;
            emit(&report, &a.output)
        }
        Command::Score(a) => {
            let report = cmd_score(a)?;
            emit(&report, &a.output)
        }
        Command::Simulate(a) => cmd_simulate(a),
    }
}

fn emit(report: &RunReport, out: &OutputArgs) -> Result<()> {
    let format = match out.format {
        FormatArg::Json => ReportFormat::Json,
        FormatArg::Csv => ReportFormat::Csv,
    };
    let text = report.render(format)?;
    match &out.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn mode_of(m: ModeArg) -> PriorMode {
    match m {
        ModeArg::BenefitOnly => PriorMode::BenefitOnly,
        ModeArg::CostBenefit => PriorMode::CostBenefit,
    }
}

fn method_of(m: MethodArg) -> Method {
    match m {
        MethodArg::Laplace => Method::Laplace,
        MethodArg::Bic => Method::Bic,
    }
}

/// The flag spelling of a value-enum argument.
fn enum_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value()
        .map(|p| p.get_name().to_string())
        .unwrap_or_default()
}

fn path_text(p: &Path) -> String {
    p.display().to_string()
}

fn load(input: &InputArgs) -> Result<(Dataset, CostPriorSpec)> {
    let mut data = load_dataset(&input.data, &input.costs)?;
    if input.standardize {
        data = data.standardized();
    }
    let spec = CostPriorSpec::for_dataset(&data, mode_of(input.mode))?;
    Ok((data, spec))
}

fn input_echo(input: &InputArgs) -> Vec<(&'static str, Value)> {
    vec![
        ("data", json!(path_text(&input.data))),
        ("costs", json!(path_text(&input.costs))),
        ("mode", json!(enum_name(input.mode))),
        ("method", json!(method_of(input.method).to_string())),
        ("standardize", json!(input.standardize)),
    ]
}

fn dataset_block(data: &Dataset, spec: &CostPriorSpec) -> Value {
    json!({
        "n": data.n(),
        "p": data.p(),
        "response": data.response_name(),
        "baseline_cost": spec.baseline(),
    })
}

fn within_config(seed: u64, draws: usize, burn_in: usize, thin: usize) -> WithinModelConfig {
    WithinModelConfig {
        burn_in,
        draws,
        thin,
        seed,
    }
}

fn diagnostics_rows(
    models: &[ModelIndicator],
    data: &Dataset,
    cfg: &WithinModelConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<DiagnosticsRow>> {
    let mut rows = Vec::new();
    for (k, m) in models.iter().enumerate() {
        // Each diagnosed model gets its own stream so adding models leaves earlier rows unchanged.
        let cfg = WithinModelConfig {
            seed: cfg.seed.wrapping_add(k as u64),
            ..*cfg
        };
        let d = diagnose(m, data, &cfg)?;
        if d.cv_exact.is_none() {
            warnings.push(format!(
                "{}: exact leave-one-out skipped (n = {} is above the refit limit)",
                m.notation_with(data.names()),
                data.n()
            ));
        }
        if d.cv_mcmc.floored_terms > 0 {
            warnings.push(format!(
                "{}: {} predictive densities floored{}",
                m.notation_with(data.names()),
                d.cv_mcmc.floored_terms,
                if d.cv_mcmc.unreliable {
                    "; LS_CV estimate unreliable"
                } else {
                    ""
                }
            ));
        }
        rows.push(DiagnosticsRow::new(&d, data.names(), data.costs()));
    }
    Ok(rows)
}

pub fn cmd_enumerate(a: &EnumerateArgs) -> Result<RunReport> {
    let (data, spec) = load(&a.input)?;
    let method = method_of(a.input.method);
    let table = enumerate_posterior(&data, &spec, method)?;
    let names = data.names();
    let mut warnings = Vec::new();
    for r in table.excluded() {
        warnings.push(format!(
            "{} excluded: {}",
            r.model.notation_with(names),
            r.exclusion.expect("excluded row")
        ));
    }
    let best_score = table.best().score;
    let models: Vec<ModelRow> = table
        .top(a.top_k)
        .iter()
        .enumerate()
        .map(|(k, r)| {
            ModelRow::new(
                k + 1,
                &r.model,
                names,
                r.cost,
                r.score,
                r.probability,
                best_score,
            )
        })
        .collect();
    let marginals = marginal_inclusion_from_table(&table)
        .into_iter()
        .enumerate()
        .map(|(j, v)| MarginalRow {
            variable: names[j].clone(),
            cost: data.costs()[j],
            inclusion: v,
            stage_one: None,
            retained: None,
        })
        .collect();
    let diag_models: Vec<ModelIndicator> = table
        .rows()
        .iter()
        .filter(|r| r.exclusion.is_none())
        .take(a.diag.diagnose)
        .map(|r| r.model)
        .collect();
    let wcfg = within_config(a.seed, a.diag.draws, a.diag.diag_burnin, a.diag.thin);
    let diagnostics = diagnostics_rows(&diag_models, &data, &wcfg, &mut warnings)?;

    let mut config = input_echo(&a.input);
    config.extend([
        ("top_k", json!(a.top_k)),
        ("seed", json!(a.seed)),
        ("diagnose", json!(a.diag.diagnose)),
        ("draws", json!(a.diag.draws)),
        ("diag_burnin", json!(a.diag.diag_burnin)),
        ("thin", json!(a.diag.thin)),
    ]);
    Ok(RunReport {
        command: "enumerate".into(),
        config: object(config),
        dataset: dataset_block(&data, &spec),
        search: Some(json!({
            "models_scored": table.rows().len(),
            "log_normalizer": table.log_normalizer(),
        })),
        models,
        marginals,
        diagnostics,
        warnings,
        ..Default::default()
    })
}

fn sampler_config(a: &SearchArgs) -> Result<SamplerConfig> {
    let method =
        match (a.sampler, a.input.method) {
            (SamplerArg::Mc3, MethodArg::Laplace) => SamplerMethod::Mc3Laplace,
            (SamplerArg::Mc3, MethodArg::Bic) => SamplerMethod::Mc3Bic,
            (SamplerArg::Rjmcmc, MethodArg::Laplace) => SamplerMethod::Rjmcmc,
            (SamplerArg::Rjmcmc, MethodArg::Bic) => return Err(Error::Config(
                "--sampler rjmcmc samples coefficients directly and only supports --method laplace"
                    .into(),
            )),
        };
    let defaults = SamplerConfig::new(method);
    let burn_in = a.burnin.unwrap_or(defaults.burn_in);
    let iters = a.iters.unwrap_or(defaults.kept());
    let mut cfg = defaults
        .with_budget(iters + burn_in, burn_in)
        .with_seed(a.seed)
        .with_chains(a.chains)
        .with_start(match a.start {
            StartArg::Null => StartState::NullModel,
            StartArg::Full => StartState::FullModel,
        })
        .with_scan(match a.scan {
            ScanArg::Systematic => Scan::Systematic,
            ScanArg::Random => Scan::Random,
        });
    cfg.within_model_updates = 1;
    cfg.validate()?;
    Ok(cfg)
}

/// `<out>` with its extension replaced by `.<suffix>.csv`.
pub fn sidecar(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{suffix}.csv"))
}

pub fn cmd_search(a: &SearchArgs) -> Result<RunReport> {
    let (data, spec) = load(&a.input)?;
    let cfg = sampler_config(a)?;
    if !(a.threshold > 0.0 && a.threshold < 1.0) {
        return Err(Error::Config(format!(
            "--threshold {} must lie strictly between 0 and 1",
            a.threshold
        )));
    }
    let result = two_stage_search(&data, &spec, &cfg, a.threshold)?;
    let names = data.names();
    let mut warnings = result.warnings.clone();

    let reduced_data = data.select(&result.reduced)?;
    let reduced_spec = spec.restrict(&result.reduced)?;
    let (models, stage_two_kind) = match &result.stage_two {
        StageTwo::Enumerated(table) => {
            for r in table.excluded() {
                warnings.push(format!(
                    "{} excluded: {}",
                    result.lift(&r.model).notation_with(names),
                    r.exclusion.expect("excluded row")
                ));
            }
            let best_score = table.best().score;
            let rows = table
                .top(a.top_k)
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let full = result.lift(&r.model);
                    ModelRow::new(
                        k + 1,
                        &full,
                        names,
                        r.cost,
                        r.score,
                        r.probability,
                        best_score,
                    )
                })
                .collect::<Vec<_>>();
            (rows, "enumerated")
        }
        StageTwo::Sampled(chain) => {
            let eval = Evaluator::new(&reduced_data, &reduced_spec)?;
            let method = cfg.method.evidence();
            let visits = chain.visit_table()?;
            let scores = visits
                .iter()
                .take(a.top_k)
                .map(|(m, _, _)| Ok(eval.evaluate(m, method)?.scored().map(|s| s.score)))
                .collect::<Result<Vec<_>>>()?;
            let best_score = scores.first().copied().flatten();
            let rows = visits
                .iter()
                .take(a.top_k)
                .zip(scores)
                .enumerate()
                .map(|(k, ((m, _, f), s))| {
                    let full = result.lift(m);
                    ModelRow::new(
                        k + 1,
                        &full,
                        names,
                        full.total_cost(data.costs()),
                        s,
                        *f,
                        best_score,
                    )
                })
                .collect::<Vec<_>>();
            (rows, "sampled")
        }
    };

    let stage_two = result.stage_two_marginals()?;
    let marginals = (0..data.p())
        .map(|j| MarginalRow {
            variable: names[j].clone(),
            cost: data.costs()[j],
            inclusion: stage_two[j],
            stage_one: Some(result.stage_one_marginals[j]),
            retained: Some(result.reduced.contains(&(j + 1))),
        })
        .collect();

    let top_models: Vec<ModelIndicator> = models
        .iter()
        .filter(|r| r.score.is_some())
        .take(a.diag.diagnose)
        .map(|r| ModelIndicator::parse(&r.model, names))
        .collect::<Result<_>>()?;
    let wcfg = within_config(a.seed, a.diag.draws, a.diag.diag_burnin, a.diag.thin);
    let diagnostics = diagnostics_rows(&top_models, &data, &wcfg, &mut warnings)?;

    if let Some(out) = &a.output.out {
        let chain = &result.stage_one;
        chain.write_visits_csv(sidecar(out, "visits"), Some(names))?;
        chain.write_marginals_csv(sidecar(out, "marginals"), names)?;
        chain.write_trace_csv(sidecar(out, "trace"), names, a.trace_stride)?;
    }

    let stage_one = &result.stage_one;
    let chains: Vec<Value> = stage_one
        .chains()
        .iter()
        .map(|c| {
            json!({
                "chain": c.chain,
                "stream": c.stream,
                "start": c.start.notation_with(names),
                "acceptance_rate": c.acceptance_rate,
                "within_model_acceptance_rate": if c.within_proposals == 0 {
                    Value::Null
                } else {
                    json!(c.within_accepted as f64 / c.within_proposals as f64)
                },
            })
        })
        .collect();
    let reduced_names: Vec<&str> = result
        .reduced
        .iter()
        .map(|&j| names[j - 1].as_str())
        .collect();

    let mut config = input_echo(&a.input);
    config.extend([
        ("sampler", json!(cfg.method.to_string())),
        ("iters", json!(cfg.kept())),
        ("burnin", json!(cfg.burn_in)),
        ("chains", json!(cfg.chains)),
        ("seed", json!(cfg.seed)),
        ("threshold", json!(a.threshold)),
        ("start", json!(enum_name(a.start))),
        ("scan", json!(enum_name(a.scan))),
        ("top_k", json!(a.top_k)),
        ("trace_stride", json!(a.trace_stride)),
        ("diagnose", json!(a.diag.diagnose)),
        ("draws", json!(a.diag.draws)),
        ("diag_burnin", json!(a.diag.diag_burnin)),
        ("thin", json!(a.diag.thin)),
    ]);
    Ok(RunReport {
        command: "search".into(),
        config: object(config),
        dataset: dataset_block(&data, &spec),
        search: Some(json!({
            "stage_one_kept": stage_one.total_kept(),
            "stage_one_acceptance_rate": stage_one.acceptance_rate(),
            "chains": chains,
            "reduced": reduced_names,
            "stage_two": stage_two_kind,
        })),
        models,
        marginals,
        diagnostics,
        warnings,
        ..Default::default()
    })
}

pub fn cmd_score(a: &ScoreArgs) -> Result<RunReport> {
    let (data, spec) = load(&a.input)?;
    let model = ModelIndicator::parse(&a.model, data.names())?;
    let method = method_of(a.input.method);
    let block = match score(&model, &data, &spec, method)? {
        Evaluation::Scored(s) => ScoreBlock::new(&s, data.names()),
        Evaluation::Excluded { reason, .. } => {
            return Err(match reason {
                crate::evidence::Exclusion::RankDeficient => Error::RankDeficient {
                    model: model.to_string(),
                },
                _ => Error::NotConverged {
                    model: format!("{model} ({reason})"),
                },
            })
        }
    };
    let mut warnings = Vec::new();
    let wcfg = within_config(a.seed, a.draws, a.diag_burnin, a.thin);
    let diagnostics = diagnostics_rows(&[model], &data, &wcfg, &mut warnings)?;
    let mut config = input_echo(&a.input);
    config.extend([
        ("model", json!(a.model)),
        ("seed", json!(a.seed)),
        ("draws", json!(a.draws)),
        ("diag_burnin", json!(a.diag_burnin)),
        ("thin", json!(a.thin)),
    ]);
    Ok(RunReport {
        command: "score".into(),
        config: object(config),
        dataset: dataset_block(&data, &spec),
        score: Some(block),
        diagnostics,
        warnings,
        ..Default::default()
    })
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut spec = SyntheticSpec::from_toml_file(&a.spec)?;
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let data = synthesize(&spec)?;
    data.write_csv(&a.out_data, &a.out_costs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sidecar_names() {
        assert_eq!(
            sidecar(Path::new("/tmp/run/report.json"), "visits"),
            PathBuf::from("/tmp/run/report.visits.csv")
        );
        assert_eq!(
            sidecar(Path::new("r"), "trace"),
            PathBuf::from("r.trace.csv")
        );
    }

    #[test]
    fn help_and_bad_flags() {
        assert_eq!(run_from(["costvs", "--help"]), 0);
        assert_eq!(run_from(["costvs", "--version"]), 0);
        assert_eq!(run_from(["costvs", "enumerate", "--bogus"]), 1);
        assert_eq!(run_from(["costvs"]), 1);
    }

    #[test]
    fn missing_files_are_data_errors() {
        let code = run_from([
            "costvs",
            "enumerate",
            "--data",
            "/nonexistent/d.csv",
            "--costs",
            "/nonexistent/c.csv",
        ]);
        assert_eq!(code, 2);
    }
}
