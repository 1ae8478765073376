//! Observational datasets `(X, T, Y)` and their CSV interchange format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomStream;

/// Covariates, binary treatment and real outcome for `n` units.
///
/// Covariates are stored column-major. Values are finite and the treatment
/// column only holds 0 and 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    covariates: Vec<Vec<f64>>,
    treatment: Vec<f64>,
    outcome: Vec<f64>,
    covariate_names: Vec<String>,
    treatment_name: String,
    outcome_name: String,
}

impl Dataset {
    pub fn new(covariates: Vec<Vec<f64>>, treatment: Vec<f64>, outcome: Vec<f64>, covariate_names: Vec<String>) -> Result<Self> {
        Self::with_labels(covariates, treatment, outcome, covariate_names, "t".into(), "y".into())
    }

    pub fn with_labels(
        covariates: Vec<Vec<f64>>,
        treatment: Vec<f64>,
        outcome: Vec<f64>,
        covariate_names: Vec<String>,
        treatment_name: String,
        outcome_name: String,
    ) -> Result<Self> {
        let n = treatment.len();
        if n < 2 {
            return Err(Error::Dataset(format!("need at least 2 rows, got {n}")));
        }
        if outcome.len() != n {
            return Err(Error::Dataset(format!("outcome has {} rows, treatment has {n}", outcome.len())));
        }
        if covariates.len() != covariate_names.len() {
            return Err(Error::Dataset(format!(
                "{} covariate columns but {} names",
                covariates.len(),
                covariate_names.len()
            )));
        }
        for (j, col) in covariates.iter().enumerate() {
            if col.len() != n {
                return Err(Error::Dataset(format!("covariate {} has {} rows, expected {n}", covariate_names[j], col.len())));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::Dataset(format!("non-finite value in {} at row {i}", covariate_names[j])));
            }
        }
        if let Some(i) = treatment.iter().position(|&t| t != 0.0 && t != 1.0) {
            return Err(Error::Dataset(format!("treatment at row {i} is {} (must be 0 or 1)", treatment[i])));
        }
        if let Some(i) = outcome.iter().position(|v| !v.is_finite()) {
            return Err(Error::Dataset(format!("non-finite outcome at row {i}")));
        }
        Ok(Self {
            covariates,
            treatment,
            outcome,
            covariate_names,
            treatment_name,
            outcome_name,
        })
    }

    pub fn n(&self) -> usize {
        self.treatment.len()
    }

    pub fn p(&self) -> usize {
        self.covariates.len()
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate(&self, j: usize) -> &[f64] {
        &self.covariates[j]
    }

    pub fn treatment(&self) -> &[f64] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn treatment_name(&self) -> &str {
        &self.treatment_name
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_name
    }

    /// Number of columns in the flattened `(covariates.., t, y)` row.
    pub fn width(&self) -> usize {
        self.p() + 2
    }

    /// Writes row `i` as `(covariates.., t, y)` into `out`.
    pub fn row_into(&self, i: usize, out: &mut [f64]) {
        let p = self.p();
        for (j, col) in self.covariates.iter().enumerate() {
            out[j] = col[i];
        }
        out[p] = self.treatment[i];
        out[p + 1] = self.outcome[i];
    }

    /// Column `k` of the flattened layout.
    pub fn flat_column(&self, k: usize) -> &[f64] {
        let p = self.p();
        match k {
            k if k < p => &self.covariates[k],
            k if k == p => &self.treatment,
            _ => &self.outcome,
        }
    }

    /// Row-major design matrix of the covariates.
    pub fn covariate_rows(&self) -> Vec<Vec<f64>> {
        (0..self.n()).map(|i| self.covariates.iter().map(|c| c[i]).collect()).collect()
    }

    pub fn schema(&self) -> ColumnSchema {
        ColumnSchema {
            treatment_column: self.treatment_name.clone(),
            outcome_column: self.outcome_name.clone(),
            covariate_columns: self.covariate_names.clone(),
        }
    }

    /// Same columns in the same order, so the two datasets can be compared.
    pub fn same_schema(&self, other: &Dataset) -> bool {
        self.covariate_names == other.covariate_names
    }

    pub fn ensure_same_schema(&self, other: &Dataset) -> Result<()> {
        if self.same_schema(other) {
            Ok(())
        } else {
            Err(Error::SchemaMismatch(format!(
                "covariates {:?} vs {:?}",
                self.covariate_names, other.covariate_names
            )))
        }
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let pick = |v: &[f64]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Dataset::with_labels(
            self.covariates.iter().map(|c| pick(c)).collect(),
            pick(&self.treatment),
            pick(&self.outcome),
            self.covariate_names.clone(),
            self.treatment_name.clone(),
            self.outcome_name.clone(),
        )
    }

    /// Copy with a replaced outcome column.
    pub fn with_outcome(&self, outcome: Vec<f64>) -> Result<Dataset> {
        Dataset::with_labels(
            self.covariates.clone(),
            self.treatment.clone(),
            outcome,
            self.covariate_names.clone(),
            self.treatment_name.clone(),
            self.outcome_name.clone(),
        )
    }

    /// Copy with a replaced treatment column.
    pub fn with_treatment(&self, treatment: Vec<f64>) -> Result<Dataset> {
        Dataset::with_labels(
            self.covariates.clone(),
            treatment,
            self.outcome.clone(),
            self.covariate_names.clone(),
            self.treatment_name.clone(),
            self.outcome_name.clone(),
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::with_capacity(self.n() * self.width() * 12);
        for name in &self.covariate_names {
            s.push_str(name);
            s.push(',');
        }
        s.push_str(&self.treatment_name);
        s.push(',');
        s.push_str(&self.outcome_name);
        s.push('\n');
        for i in 0..self.n() {
            for col in &self.covariates {
                // Display for f64 is the shortest representation that parses
                // back to the same value.
                let _ = write!(s, "{},", col[i]);
            }
            let _ = writeln!(s, "{},{}", self.treatment[i] as u8, self.outcome[i]);
        }
        s
    }

    pub fn parse_csv(text: &str, schema: &ColumnSchema, origin: &Path) -> Result<Dataset> {
        schema.validate()?;
        let csv_err = |message: String| Error::Csv {
            path: origin.to_path_buf(),
            message,
        };
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| csv_err("empty file".into()))?;
        let labels: Vec<&str> = header.split(',').map(str::trim).collect();
        let find = |name: &str| {
            labels
                .iter()
                .position(|l| *l == name)
                .ok_or_else(|| csv_err(format!("missing column `{name}`")))
        };
        let t_idx = find(&schema.treatment_column)?;
        let y_idx = find(&schema.outcome_column)?;
        let x_idx = schema.covariate_columns.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;

        let p = x_idx.len();
        let mut covariates = vec![Vec::new(); p];
        let mut treatment = Vec::new();
        let mut outcome = Vec::new();
        for (r, line) in lines.enumerate() {
            let row = r + 1;
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            let row_err = |message: String| Error::CsvRow {
                path: origin.to_path_buf(),
                row,
                message,
            };
            if cells.len() != labels.len() {
                return Err(row_err(format!("expected {} cells, found {}", labels.len(), cells.len())));
            }
            let num = |idx: usize| -> Result<f64> {
                let c = cells[idx];
                match c.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(row_err(format!("column `{}`: cannot parse `{c}` as a finite number", labels[idx]))),
                }
            };
            for (j, &idx) in x_idx.iter().enumerate() {
                covariates[j].push(num(idx)?);
            }
            let t = match cells[t_idx].to_ascii_lowercase().as_str() {
                "true" => 1.0,
                "false" => 0.0,
                other => match other.parse::<f64>() {
                    Ok(v) if v == 0.0 || v == 1.0 => v,
                    _ => {
                        return Err(row_err(format!(
                            "treatment column `{}` must be 0/1/true/false, found `{}`",
                            schema.treatment_column, cells[t_idx]
                        )))
                    }
                },
            };
            treatment.push(t);
            outcome.push(num(y_idx)?);
        }
        if treatment.is_empty() {
            return Err(csv_err("no data rows".into()));
        }
        Dataset::with_labels(
            covariates,
            treatment,
            outcome,
            schema.covariate_columns.clone(),
            schema.treatment_column.clone(),
            schema.outcome_column.clone(),
        )
        .map_err(|e| csv_err(e.to_string()))
    }
}

/// Which CSV columns play which role.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColumnSchema {
    pub treatment_column: String,
    pub outcome_column: String,
    pub covariate_columns: Vec<String>,
}

impl ColumnSchema {
    pub fn validate(&self) -> Result<()> {
        if self.covariate_columns.is_empty() {
            return Err(Error::Config("schema needs at least one covariate column".into()));
        }
        let all: Vec<&String> = self.covariate_columns.iter().chain([&self.treatment_column, &self.outcome_column]).collect();
        for (i, a) in all.iter().enumerate() {
            if a.is_empty() || !a.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                return Err(Error::Config(format!("column label `{a}` must match [A-Za-z0-9_]+")));
            }
            if all[..i].contains(a) {
                return Err(Error::Config(format!("column label `{a}` is used twice")));
            }
        }
        Ok(())
    }
}

pub fn read_csv(path: &Path, schema: &ColumnSchema) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    Dataset::parse_csv(&text, schema, path)
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset.to_csv_string())?;
    Ok(())
}

/// Column means and standard deviations of a reference dataset. The
/// treatment column is left untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub covariate_mean: Vec<f64>,
    pub covariate_sd: Vec<f64>,
    pub outcome_mean: f64,
    pub outcome_sd: f64,
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    (m, if sd > 0.0 && sd.is_finite() { sd } else { 1.0 })
}

impl Standardizer {
    pub fn fit(reference: &Dataset) -> Self {
        let (covariate_mean, covariate_sd) = reference.covariates().iter().map(|c| mean_sd(c)).unzip();
        let (outcome_mean, outcome_sd) = mean_sd(reference.outcome());
        Self {
            covariate_mean,
            covariate_sd,
            outcome_mean,
            outcome_sd,
        }
    }

    /// Mean/sd for column `k` of the flattened `(covariates.., t, y)` row;
    /// the treatment column maps to `(0, 1)`.
    pub fn flat_affine(&self, k: usize) -> (f64, f64) {
        let p = self.covariate_mean.len();
        match k {
            k if k < p => (self.covariate_mean[k], self.covariate_sd[k]),
            k if k == p => (0.0, 1.0),
            _ => (self.outcome_mean, self.outcome_sd),
        }
    }

    fn check(&self, d: &Dataset) -> Result<()> {
        if d.p() != self.covariate_mean.len() {
            return Err(Error::SchemaMismatch(format!(
                "standardizer has {} covariates, dataset has {}",
                self.covariate_mean.len(),
                d.p()
            )));
        }
        Ok(())
    }

    pub fn standardize(&self, d: &Dataset) -> Result<Dataset> {
        self.check(d)?;
        let cov = d
            .covariates()
            .iter()
            .enumerate()
            .map(|(j, c)| c.iter().map(|v| (v - self.covariate_mean[j]) / self.covariate_sd[j]).collect())
            .collect();
        let y = d.outcome().iter().map(|v| (v - self.outcome_mean) / self.outcome_sd).collect();
        Dataset::with_labels(
            cov,
            d.treatment().to_vec(),
            y,
            d.covariate_names().to_vec(),
            d.treatment_name().into(),
            d.outcome_name().into(),
        )
    }

    pub fn unstandardize(&self, d: &Dataset) -> Result<Dataset> {
        self.check(d)?;
        let cov = d
            .covariates()
            .iter()
            .enumerate()
            .map(|(j, c)| c.iter().map(|v| v * self.covariate_sd[j] + self.covariate_mean[j]).collect())
            .collect();
        let y = d.outcome().iter().map(|v| v * self.outcome_sd + self.outcome_mean).collect();
        Dataset::with_labels(
            cov,
            d.treatment().to_vec(),
            y,
            d.covariate_names().to_vec(),
            d.treatment_name().into(),
            d.outcome_name().into(),
        )
    }
}

/// `n` covariate rows drawn uniformly with replacement from `source`,
/// returned column-major.
pub fn bootstrap_covariates(source: &Dataset, n: usize, stream: &RandomStream) -> Vec<Vec<f64>> {
    let mut rng = stream.rng();
    let m = source.n();
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
    source.covariates().iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect()
}
