use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

use super::ModelSpec;

/// A CSV table held as text, with columns pulled out on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl ObservationTable {
    pub fn read<R: Read>(source: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
        let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { headers, rows })
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(f)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found")))
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<&str>> {
        let i = self.column_index(name)?;
        Ok(self.rows.iter().map(|r| r[i].as_str()).collect())
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<f64>> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(row, r)| {
                let v: f64 = r[i]
                    .parse()
                    .map_err(|_| Error::Parse(format!("row {}: `{name}` = {:?} is not a number", row + 1, r[i])))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::Parse(format!("row {}: `{name}` is not finite", row + 1)))
                }
            })
            .collect()
    }
}

/// Design matrix, response and panel structure for one model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub covariates: Vec<String>,
    pub n_random: usize,
    /// Row-major `n x K`; random covariates occupy the last `n_random` columns.
    pub x: Vec<f64>,
    /// Levels `1..=levels`.
    pub y: Vec<usize>,
    pub levels: usize,
    /// Row indices per panel unit, in first-appearance order.
    pub groups: Vec<Vec<usize>>,
}

impl ModelData {
    pub fn new(
        covariates: Vec<String>,
        n_random: usize,
        x: Vec<f64>,
        y: Vec<usize>,
        levels: usize,
        groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let k = covariates.len();
        if n_random > k {
            return Err(Error::invalid("more random covariates than covariates"));
        }
        if x.len() != y.len() * k {
            return Err(Error::invalid("design matrix size does not match the response"));
        }
        if levels < 2 {
            return Err(Error::invalid("an ordered response needs at least 2 levels"));
        }
        if let Some(bad) = y.iter().find(|&&v| v == 0 || v > levels) {
            return Err(Error::Range(format!("response level {bad} outside 1..={levels}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite covariate value"));
        }
        let mut seen = vec![false; y.len()];
        for &i in groups.iter().flatten() {
            if i >= y.len() || seen[i] {
                return Err(Error::invalid("groups must partition the observations"));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid("groups must partition the observations"));
        }
        Ok(Self {
            covariates,
            n_random,
            x,
            y,
            levels,
            groups,
        })
    }

    /// Builds the model arrays from a table. Without random covariates a
    /// missing group column is allowed and every row is its own unit.
    pub fn from_table(table: &ObservationTable, spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        if table.is_empty() {
            return Err(Error::invalid("no observations"));
        }
        let names = spec.covariates();
        let k = names.len();
        let n = table.len();
        let mut x = vec![0.0; n * k];
        for (c, name) in names.iter().enumerate() {
            for (r, v) in table.numeric_column(name)?.into_iter().enumerate() {
                x[r * k + c] = v;
            }
        }
        let mut y = Vec::with_capacity(n);
        for (r, v) in table.numeric_column(&spec.response)?.into_iter().enumerate() {
            if v.fract() != 0.0 || v < 1.0 {
                return Err(Error::Range(format!(
                    "row {}: response {v} is not a positive integer level",
                    r + 1
                )));
            }
            y.push(v as usize);
        }
        let observed_max = *y.iter().max().expect("non-empty");
        let levels = spec.levels.unwrap_or(observed_max);
        let groups = match table.text_column(spec.group_key()) {
            Ok(keys) => group_rows(&keys),
            Err(_) if spec.random.is_empty() && spec.group_key.is_none() => (0..n).map(|i| vec![i]).collect(),
            Err(e) => return Err(e),
        };
        Self::new(
            names.into_iter().map(str::to_string).collect(),
            spec.random.len(),
            x,
            y,
            levels,
            groups,
        )
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_cov(&self) -> usize {
        self.covariates.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_cov();
        &self.x[i * k..(i + 1) * k]
    }

    /// Observed frequency of each level.
    pub fn level_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.levels];
        for &v in &self.y {
            c[v - 1] += 1;
        }
        c
    }

    /// Returns a copy with one covariate multiplied by `factor`.
    pub fn with_scaled_covariate(&self, col: usize, factor: f64) -> Self {
        let mut out = self.clone();
        let k = self.n_cov();
        for r in 0..self.n_obs() {
            out.x[r * k + col] *= factor;
        }
        out
    }
}

fn group_rows(keys: &[&str]) -> Vec<Vec<usize>> {
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        let g = *index.entry(k).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}
