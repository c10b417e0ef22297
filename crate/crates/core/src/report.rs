//! Run reports: a JSON document and an equivalent long-format CSV.
//!
//! Every float is written with 17 significant digits so that reruns can be diffed
//! byte for byte and the two encodings carry identical numbers.

use std::io::{self, Write};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::diagnostics::ModelDiagnostics;
use crate::error::{Error, Result};
use crate::evidence::ModelScore;
use crate::model_space::ModelIndicator;
use crate::num::fmt_f64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// One row of the ranked model table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelRow {
    pub rank: usize,
    pub model: String,
    pub encoding: String,
    pub dimension: usize,
    pub cost: f64,
    pub score: Option<f64>,
    pub probability: f64,
    /// `log(P(best) / P(this))`.
    pub log_odds_best: Option<f64>,
    pub odds_best: Option<f64>,
}

impl ModelRow {
    pub fn new(
        rank: usize,
        model: &ModelIndicator,
        names: &[String],
        cost: f64,
        score: Option<f64>,
        probability: f64,
        best_score: Option<f64>,
    ) -> Self {
        let log_odds = match (score, best_score) {
            (Some(s), Some(b)) => Some(0.5 * (s - b)),
            _ => None,
        };
        ModelRow {
            rank,
            model: model.notation_with(names),
            encoding: model.encoding().to_string(),
            dimension: model.dimension(),
            cost,
            score,
            probability,
            log_odds_best: log_odds,
            odds_best: log_odds.map(f64::exp).filter(|v| v.is_finite()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MarginalRow {
    pub variable: String,
    pub cost: f64,
    pub inclusion: f64,
    /// Search only: stage-one estimate and whether the variable passed the threshold.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage_one: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub retained: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagnosticsRow {
    pub model: String,
    pub dimension: usize,
    pub cost: f64,
    pub deviance_min: f64,
    pub deviance_median: f64,
    pub deviance_mean: f64,
    pub deviance_max: f64,
    pub deviance_mle: Option<f64>,
    pub ls_cv_exact: Option<f64>,
    pub ls_cv_mcmc: f64,
    pub ls_cv_mcmc_se: f64,
    pub floored_densities: u64,
    pub ls_cv_unreliable: bool,
    pub draws: usize,
    pub acceptance_rate: f64,
}

impl DiagnosticsRow {
    pub fn new(d: &ModelDiagnostics, names: &[String], costs: &[f64]) -> Self {
        DiagnosticsRow {
            model: d.model.notation_with(names),
            dimension: d.model.dimension(),
            cost: d.model.total_cost(costs),
            deviance_min: d.deviance.minimum,
            deviance_median: d.deviance.median,
            deviance_mean: d.deviance.mean,
            deviance_max: d.deviance.maximum,
            deviance_mle: d.deviance.mle_deviance,
            ls_cv_exact: d.cv_exact,
            ls_cv_mcmc: d.cv_mcmc.estimate,
            ls_cv_mcmc_se: d.cv_mcmc.standard_error,
            floored_densities: d.cv_mcmc.floored_terms,
            ls_cv_unreliable: d.cv_mcmc.unreliable,
            draws: d.deviance.draws,
            acceptance_rate: d.deviance.acceptance_rate,
        }
    }
}

/// Score block for a single model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreBlock {
    pub model: String,
    pub method: String,
    pub dimension: usize,
    pub cost: f64,
    pub score: f64,
    pub log_likelihood: f64,
    pub log_model_prior: f64,
    pub phi: Option<f64>,
    pub log_marginal: Option<f64>,
}

impl ScoreBlock {
    pub fn new(s: &ModelScore, names: &[String]) -> Self {
        ScoreBlock {
            model: s.model.notation_with(names),
            method: s.method.to_string(),
            dimension: s.dimension,
            cost: s.cost,
            score: s.score,
            log_likelihood: s.log_likelihood,
            log_model_prior: s.log_model_prior,
            phi: s.phi,
            log_marginal: s.log_marginal,
        }
    }
}

/// Ordered report sections; absent sections are omitted from the output.
#[derive(Debug, Clone, Default, Serialize)]
pub struct RunReport {
    pub tool: Tool,
    pub command: String,
    pub config: Value,
    pub dataset: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub search: Option<Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub score: Option<ScoreBlock>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub models: Vec<ModelRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub marginals: Vec<MarginalRow>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<DiagnosticsRow>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Tool {
    pub name: String,
    pub version: String,
}

impl Default for Tool {
    fn default() -> Self {
        Tool {
            name: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

impl RunReport {
    pub fn to_value(&self) -> Result<Value> {
        serde_json::to_value(self).map_err(|e| Error::Numerical(format!("report encoding: {e}")))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        let value = self.to_value()?;
        Ok(match format {
            ReportFormat::Json => to_json(&value),
            ReportFormat::Csv => to_csv(&value),
        })
    }
}

/// Pretty JSON with every float in `{:.16e}` form.
pub fn to_json(value: &Value) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloat::default());
    value
        .serialize(&mut ser)
        .expect("serializing a JSON value into memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("JSON output is UTF-8")
}

#[derive(Default)]
struct FixedFloat {
    pretty: serde_json::ser::PrettyFormatter<'static>,
}

macro_rules! delegate {
    ($($name:ident($($arg:ident: $ty:ty),*);)*) => {
        $(fn $name<W: ?Sized + Write>(&mut self, writer: &mut W $(, $arg: $ty)*) -> io::Result<()> {
            self.pretty.$name(writer $(, $arg)*)
        })*
    };
}

impl serde_json::ser::Formatter for FixedFloat {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }

    delegate! {
        begin_array();
        end_array();
        begin_array_value(first: bool);
        end_array_value();
        begin_object();
        end_object();
        begin_object_key(first: bool);
        end_object_key();
        begin_object_value();
        end_object_value();
    }
}

/// Flattens the report into `path,value` rows, e.g. `models.0.probability`.
pub fn to_csv(value: &Value) -> String {
    let mut rows = Vec::new();
    flatten(value, String::new(), &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["path", "value"]).expect("in-memory csv");
    for (path, v) in rows {
        w.write_record([path, v]).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is UTF-8")
}

fn flatten(value: &Value, path: String, out: &mut Vec<(String, String)>) {
    let join = |k: &str| {
        if path.is_empty() {
            k.to_string()
        } else {
            format!("{path}.{k}")
        }
    };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(v, join(k), out);
            }
        }
        Value::Array(items) => {
            for (i, v) in items.iter().enumerate() {
                flatten(v, join(&i.to_string()), out);
            }
        }
        Value::Null => out.push((path, String::new())),
        Value::Bool(b) => out.push((path, b.to_string())),
        Value::Number(n) => out.push((path, number_text(n))),
        Value::String(s) => out.push((path, s.clone())),
    }
}

fn number_text(n: &serde_json::Number) -> String {
    if n.is_f64() {
        fmt_f64(n.as_f64().expect("f64 number"))
    } else {
        n.to_string()
    }
}

/// Convenience for building config echoes.
pub fn object(pairs: Vec<(&str, Value)>) -> Value {
    let mut map = Map::new();
    for (k, v) in pairs {
        map.insert(k.to_string(), v);
    }
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn json_floats_have_seventeen_digits() {
        let v = json!({"a": 0.1, "b": [1, 2.5], "c": null, "d": "x"});
        let text = to_json(&v);
        assert!(text.contains("1.0000000000000001e-1"));
        assert!(text.contains("2.5000000000000000e0"));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["a"].as_f64().unwrap(), 0.1);
        assert_eq!(back["b"][0].as_u64().unwrap(), 1);
    }

    #[test]
    fn csv_flattening_matches_json_numbers() {
        let v = json!({"models": [{"p": 1.0 / 3.0, "n": 4}], "ok": true});
        let csv = to_csv(&v);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "path,value");
        assert_eq!(lines[1], format!("models.0.p,{}", fmt_f64(1.0 / 3.0)));
        assert_eq!(lines[2], "models.0.n,4");
        assert_eq!(lines[3], "ok,true");
    }

    #[test]
    fn odds_against_best() {
        let names: Vec<String> = vec!["a".into(), "b".into()];
        let m = ModelIndicator::from_indices(2, &[2]).unwrap();
        let row = ModelRow::new(2, &m, &names, 3.0, Some(12.0), 0.1, Some(10.0));
        assert_eq!(row.model, "b");
        assert!((row.log_odds_best.unwrap() - 1.0).abs() < 1e-15);
        assert!((row.odds_best.unwrap() - 1f64.exp()).abs() < 1e-15);
        let far = ModelRow::new(3, &m, &names, 3.0, Some(1e4), 0.0, Some(0.0));
        assert!(far.odds_best.is_none());
    }
}
