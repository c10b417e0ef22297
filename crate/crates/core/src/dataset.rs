//! Binary-outcome datasets with per-variable data-collection costs.
//!
//! A [`Dataset`] stores the design matrix with the intercept materialized as
//! column 0, so `X[:, 0] == 1` always and predictor `j` (1-based) lives in
//! column `j`. Datasets are immutable once built and can be shared freely
//! between sampler chains.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::logistic;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    response_name: String,
    y: DVector<f64>,
    x: DMatrix<f64>,
    names: Vec<String>,
    costs: Vec<f64>,
}

impl Dataset {
    /// Builds a dataset from raw predictor rows; the intercept column is prepended.
    pub fn new(
        y: Vec<f64>,
        predictors: DMatrix<f64>,
        names: Vec<String>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if predictors.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: predictors.nrows(),
            });
        }
        let p = predictors.ncols();
        let mut x = DMatrix::from_element(n, p + 1, 1.0);
        x.columns_mut(1, p).copy_from(&predictors);
        Self::from_design(y, x, names, costs)
    }

    /// Builds a dataset from a design matrix that already carries the intercept column.
    pub fn from_design(
        y: Vec<f64>,
        x: DMatrix<f64>,
        names: Vec<String>,
        costs: Vec<f64>,
    ) -> Result<Self> {
        let dataset = Dataset {
            response_name: "y".to_string(),
            y: DVector::from_vec(y),
            x,
            names,
            costs,
        };
        dataset.validate()?;
        Ok(dataset)
    }

    pub fn with_response_name(mut self, name: impl Into<String>) -> Self {
        self.response_name = name.into();
        self
    }

    fn validate(&self) -> Result<()> {
        let n = self.y.len();
        let p = self.names.len();
        if n == 0 {
            return Err(Error::InvalidDataset("no observations".into()));
        }
        if self.x.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: self.x.nrows(),
            });
        }
        if self.x.ncols() != p + 1 {
            return Err(Error::DimensionMismatch {
                expected: p + 1,
                got: self.x.ncols(),
            });
        }
        if self.costs.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: self.costs.len(),
            });
        }
        for (row, &v) in self.y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryResponse {
                    row: row + 1,
                    value: v.to_string(),
                });
            }
        }
        let ones = self.y.iter().filter(|&&v| v == 1.0).count();
        if ones == 0 || ones == n {
            return Err(Error::ConstantResponse);
        }
        if self.x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidDataset(
                "column 0 of the design matrix must be the intercept".into(),
            ));
        }
        for (j, column) in self.x.column_iter().enumerate().skip(1) {
            if let Some(row) = column.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonNumericCell {
                    row: row + 1,
                    column: self.names[j - 1].clone(),
                    value: column[row].to_string(),
                });
            }
        }
        for (name, &cost) in self.names.iter().zip(&self.costs) {
            if !(cost > 0.0 && cost.is_finite()) {
                return Err(Error::NonPositiveCost {
                    name: name.clone(),
                    cost,
                });
            }
        }
        let mut seen = HashMap::new();
        for name in &self.names {
            if seen.insert(name.as_str(), ()).is_some() {
                return Err(Error::InvalidDataset(format!(
                    "duplicate predictor name {name:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Number of candidate predictors (the intercept is not counted).
    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Full design matrix, `n x (p + 1)`, intercept in column 0.
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    /// Index (1-based) of the predictor called `name`.
    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name).map(|i| i + 1)
    }

    /// Restricts the dataset to the given 1-based predictor indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let p = self.p();
        let mut cols = Vec::with_capacity(indices.len() + 1);
        cols.push(0);
        for &j in indices {
            if j == 0 || j > p {
                return Err(Error::IndexOutOfRange { index: j, p });
            }
            cols.push(j);
        }
        Ok(Dataset {
            response_name: self.response_name.clone(),
            y: self.y.clone(),
            x: self.x.select_columns(&cols),
            names: indices.iter().map(|&j| self.names[j - 1].clone()).collect(),
            costs: indices.iter().map(|&j| self.costs[j - 1]).collect(),
        })
    }

    /// Copy with every predictor centered and scaled to unit sample variance.
    /// Constant predictors are only centered.
    pub fn standardized(&self) -> Dataset {
        let mut x = self.x.clone();
        let n = self.n() as f64;
        for j in 1..x.ncols() {
            let mut col = x.column_mut(j);
            let mean = col.sum() / n;
            col.add_scalar_mut(-mean);
            let sd = (col.norm_squared() / (n - 1.0).max(1.0)).sqrt();
            if sd > 0.0 {
                col /= sd;
            }
        }
        Dataset { x, ..self.clone() }
    }

    /// Writes the data CSV (response first) and the `name,cost` CSV.
    pub fn write_csv(&self, data_path: &Path, costs_path: &Path) -> Result<()> {
        let file = File::create(data_path).map_err(|e| Error::io(data_path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(data_path, e);
        write!(w, "{}", self.response_name).map_err(io)?;
        for name in &self.names {
            write!(w, ",{name}").map_err(io)?;
        }
        writeln!(w).map_err(io)?;
        for i in 0..self.n() {
            write!(w, "{}", self.y[i] as u8).map_err(io)?;
            for j in 1..=self.p() {
                write!(w, ",{}", self.x[(i, j)]).map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)?;

        let file = File::create(costs_path).map_err(|e| Error::io(costs_path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(costs_path, e);
        for (name, cost) in self.names.iter().zip(&self.costs) {
            writeln!(w, "{name},{cost}").map_err(io)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    value
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonNumericCell {
            row,
            column: column.to_string(),
            value: value.to_string(),
        })
}

/// Loads a data CSV (header row, response in the first column) and its cost schedule.
pub fn load_dataset(data_path: impl AsRef<Path>, costs_path: impl AsRef<Path>) -> Result<Dataset> {
    let data_path = data_path.as_ref();
    let costs_path = costs_path.as_ref();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(data_path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(data_path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 {
        return Err(Error::InvalidDataset(
            "data file needs a response column and at least one predictor".into(),
        ));
    }
    let response_name = header[0].clone();
    let names: Vec<String> = header[1..].to_vec();
    let p = names.len();

    let mut y = Vec::new();
    let mut values = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = idx + 1;
        if record.len() != p + 1 {
            return Err(Error::InvalidDataset(format!(
                "row {row} has {} fields, expected {}",
                record.len(),
                p + 1
            )));
        }
        let raw = record[0].trim();
        let response = match raw.parse::<f64>() {
            Ok(v) if v == 0.0 || v == 1.0 => v,
            _ => {
                return Err(Error::NonBinaryResponse {
                    row,
                    value: raw.to_string(),
                })
            }
        };
        y.push(response);
        for (j, cell) in record.iter().enumerate().skip(1) {
            values.push(parse_cell(cell, row, &names[j - 1])?);
        }
    }
    let n = y.len();
    let predictors = DMatrix::from_row_slice(n, p, &values);
    let costs = load_costs(costs_path, &names)?;
    Ok(Dataset::new(y, predictors, names, costs)?.with_response_name(response_name))
}

/// Reads `name,cost` rows and orders them to match `names`. A leading header row is
/// tolerated when its second field is not numeric.
fn load_costs(path: &Path, names: &[String]) -> Result<Vec<f64>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Config(format!("{other:?}")),
        })?;
    let mut by_name: HashMap<String, f64> = HashMap::new();
    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != 2 {
            return Err(Error::InvalidDataset(format!(
                "costs row {} must have exactly two fields",
                idx + 1
            )));
        }
        let name = record[0].to_string();
        let cost = match record[1].parse::<f64>() {
            Ok(c) => c,
            Err(_) if idx == 0 => continue,
            Err(_) => {
                return Err(Error::NonNumericCell {
                    row: idx + 1,
                    column: "cost".into(),
                    value: record[1].to_string(),
                })
            }
        };
        if !names.contains(&name) {
            return Err(Error::ExtraCost(name));
        }
        if by_name.insert(name.clone(), cost).is_some() {
            return Err(Error::DuplicateCost(name));
        }
    }
    names
        .iter()
        .map(|name| {
            let cost = *by_name
                .get(name)
                .ok_or_else(|| Error::MissingCost(name.clone()))?;
            if !(cost > 0.0 && cost.is_finite()) {
                return Err(Error::NonPositiveCost {
                    name: name.clone(),
                    cost,
                });
            }
            Ok(cost)
        })
        .collect()
}

/// Pairwise correlation between two predictors (1-based indices).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCorrelation {
    pub i: usize,
    pub j: usize,
    pub rho: f64,
}

/// Recipe for a synthetic dataset: correlated Gaussian predictors and
/// Bernoulli outcomes with success probability `logistic(X beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub p: usize,
    /// Intercept first, then one coefficient per predictor.
    pub beta: Vec<f64>,
    #[serde(default)]
    pub correlations: Vec<PairCorrelation>,
    pub costs: Vec<f64>,
    #[serde(default)]
    pub names: Option<Vec<String>>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Reads a TOML key/value file.
    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn correlation_matrix(&self) -> Result<DMatrix<f64>> {
        let mut r = DMatrix::identity(self.p, self.p);
        for pair in &self.correlations {
            let PairCorrelation { i, j, rho } = *pair;
            for index in [i, j] {
                if index == 0 || index > self.p {
                    return Err(Error::IndexOutOfRange { index, p: self.p });
                }
            }
            if i == j || !(rho.abs() < 1.0) {
                return Err(Error::NotPositiveDefinite);
            }
            r[(i - 1, j - 1)] = rho;
            r[(j - 1, i - 1)] = rho;
        }
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::Config("synthetic n must be at least 2".into()));
        }
        if self.p == 0 {
            return Err(Error::Config("synthetic p must be at least 1".into()));
        }
        if self.beta.len() != self.p + 1 {
            return Err(Error::DimensionMismatch {
                expected: self.p + 1,
                got: self.beta.len(),
            });
        }
        if self.costs.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: self.costs.len(),
            });
        }
        if let Some(names) = &self.names {
            if names.len() != self.p {
                return Err(Error::DimensionMismatch {
                    expected: self.p,
                    got: names.len(),
                });
            }
        }
        Ok(())
    }
}

/// Draws a dataset from `spec`. Identical specs give bit-identical datasets.
pub fn synthesize(spec: &SyntheticSpec) -> Result<Dataset> {
    spec.validate()?;
    let corr = spec.correlation_matrix()?;
    let chol = corr.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let l = chol.l();
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut predictors = DMatrix::zeros(n, p);
    let mut y = Vec::with_capacity(n);
    let mut z = DVector::zeros(p);
    for i in 0..n {
        for k in 0..p {
            z[k] = StandardNormal.sample(&mut rng);
        }
        let row = &l * &z;
        let mut eta = spec.beta[0];
        for k in 0..p {
            predictors[(i, k)] = row[k];
            eta += spec.beta[k + 1] * row[k];
        }
        let u: f64 = rand::Rng::random(&mut rng);
        y.push(if u < logistic(eta) { 1.0 } else { 0.0 });
    }
    let names = spec
        .names
        .clone()
        .unwrap_or_else(|| (1..=p).map(|j| format!("X{j}")).collect());
    Dataset::new(y, predictors, names, spec.costs.clone())
}
