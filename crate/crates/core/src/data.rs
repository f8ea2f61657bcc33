//! Tabular data: the [`Dataset`] type, CSV ingestion with per-dataset
//! recipes, train/test splitting and z-score standardization.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset has no rows")]
    Empty,
    #[error("ragged feature matrix: row {row} has {found} columns, expected {expected}")]
    Ragged {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("target has {found} entries, expected {expected}")]
    TargetLength { expected: usize, found: usize },
    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("expected {expected} feature names, got {found}")]
    NameCount { expected: usize, found: usize },
    #[error("duplicate feature name {0:?}")]
    DuplicateName(String),
    #[error("missing target column {0:?}")]
    MissingTarget(String),
    #[error("recipe references unknown column {0:?}")]
    UnknownColumn(String),
    #[error("target column {0:?} cannot also be dropped or encoded")]
    TargetConflict(String),
    #[error("unparseable numeric cell {value:?} in column {column:?} (line {line})")]
    Parse {
        column: String,
        value: String,
        line: usize,
    },
    #[error("unknown level {value:?} for categorical column {column:?}")]
    UnknownLevel { column: String, value: String },
    #[error("no rows left after removing missing values ({dropped} dropped)")]
    AllRowsDropped { dropped: usize },
    #[error("need at least {needed} rows, got {found}")]
    TooFewRows { needed: usize, found: usize },
    #[error("train fraction must lie in (0, 1), got {0}")]
    BadFraction(f64),
    #[error("row index {0} out of range")]
    RowOutOfRange(usize),
    #[error("column count mismatch: expected {expected}, got {found}")]
    ColumnMismatch { expected: usize, found: usize },
    #[error("empty row selection")]
    EmptySelection,
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

/// An immutable numeric feature matrix (row-major) with its target vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    n_cols: usize,
    target: Vec<f64>,
    feature_names: Vec<String>,
    target_name: String,
}

impl Dataset {
    /// Builds a dataset from a flat row-major feature buffer.
    pub fn from_flat(
        features: Vec<f64>,
        n_cols: usize,
        target: Vec<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        let n_rows = target.len();
        if n_rows == 0 {
            return Err(DataError::Empty);
        }
        if features.len() != n_rows * n_cols {
            return Err(DataError::Ragged {
                row: features.len() / n_cols.max(1),
                expected: n_cols,
                found: features.len() % n_cols.max(1),
            });
        }
        if feature_names.len() != n_cols {
            return Err(DataError::NameCount {
                expected: n_cols,
                found: feature_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::DuplicateName(name.clone()));
            }
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                row: pos / n_cols,
                col: pos % n_cols,
            });
        }
        if let Some(row) = target.iter().position(|v| !v.is_finite()) {
            return Err(DataError::NonFinite { row, col: n_cols });
        }
        Ok(Self {
            features,
            n_cols,
            target,
            feature_names,
            target_name: target_name.into(),
        })
    }

    /// Builds a dataset from a list of rows.
    pub fn from_rows(
        rows: Vec<Vec<f64>>,
        target: Vec<f64>,
        feature_names: Vec<String>,
        target_name: impl Into<String>,
    ) -> Result<Self> {
        if rows.is_empty() {
            return Err(DataError::Empty);
        }
        if rows.len() != target.len() {
            return Err(DataError::TargetLength {
                expected: rows.len(),
                found: target.len(),
            });
        }
        let n_cols = rows[0].len();
        let mut flat = Vec::with_capacity(rows.len() * n_cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != n_cols {
                return Err(DataError::Ragged {
                    row: i,
                    expected: n_cols,
                    found: r.len(),
                });
            }
            flat.extend_from_slice(r);
        }
        Self::from_flat(flat, n_cols, target, feature_names, target_name)
    }

    /// Like [`Dataset::from_rows`] with generated names `x1..xp` and `y`.
    pub fn unnamed(rows: Vec<Vec<f64>>, target: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let names = (1..=p).map(|j| format!("x{j}")).collect();
        Self::from_rows(rows, target, names, "y")
    }

    pub fn n_rows(&self) -> usize {
        self.target.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        // chunks_exact panics on a zero chunk size
        self.features.chunks_exact(self.n_cols.max(1))
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn target_name(&self) -> &str {
        &self.target_name
    }

    pub fn target_mean(&self) -> f64 {
        self.target.iter().sum::<f64>() / self.target.len() as f64
    }

    /// A new dataset holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(DataError::EmptySelection);
        }
        let mut features = Vec::with_capacity(rows.len() * self.n_cols);
        let mut target = Vec::with_capacity(rows.len());
        for &r in rows {
            if r >= self.n_rows() {
                return Err(DataError::RowOutOfRange(r));
            }
            features.extend_from_slice(self.row(r));
            target.push(self.target[r]);
        }
        Ok(Self {
            features,
            n_cols: self.n_cols,
            target,
            feature_names: self.feature_names.clone(),
            target_name: self.target_name.clone(),
        })
    }

    pub(crate) fn with_features(&self, features: Vec<f64>) -> Self {
        debug_assert_eq!(features.len(), self.features.len());
        Self {
            features,
            ..self.clone()
        }
    }
}

/// How a categorical column is turned into numbers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoding {
    /// One column of codes `1..=L`. With explicit `levels` the code is the
    /// 1-based position in that list; otherwise distinct values are sorted.
    IntegerCode { levels: Option<Vec<String>> },
    /// One indicator column per distinct level (sorted), named `col=level`.
    OneHot,
}

/// Per-file preprocessing instructions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestRecipe {
    pub target_column: String,
    pub drop_columns: Vec<String>,
    pub missing_markers: Vec<String>,
    pub categorical_columns: BTreeMap<String, Encoding>,
}

impl IngestRecipe {
    /// A recipe with only a target column: everything else numeric.
    pub fn target(column: impl Into<String>) -> Self {
        Self {
            target_column: column.into(),
            ..Self::default()
        }
    }

    fn validate(&self, header: &[String]) -> Result<()> {
        if !header.contains(&self.target_column) {
            return Err(DataError::MissingTarget(self.target_column.clone()));
        }
        if self.drop_columns.contains(&self.target_column)
            || self.categorical_columns.contains_key(&self.target_column)
        {
            return Err(DataError::TargetConflict(self.target_column.clone()));
        }
        for col in self
            .drop_columns
            .iter()
            .chain(self.categorical_columns.keys())
        {
            if !header.contains(col) {
                return Err(DataError::UnknownColumn(col.clone()));
            }
        }
        Ok(())
    }
}

/// Result of [`load_csv`]: the dataset plus ingestion bookkeeping.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Rows removed for carrying a missing marker or a non-finite number.
    pub dropped_rows: usize,
}

/// Reads a CSV file and applies `recipe`.
pub fn load_csv(path: impl AsRef<Path>, recipe: &IngestRecipe) -> Result<Ingested> {
    let file = File::open(path)?;
    read_csv(file, recipe)
}

/// Reads the header row only (trimmed).
pub fn read_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path)?;
    Ok(rdr.headers()?.iter().map(|h| h.trim().to_string()).collect())
}

enum ColumnPlan {
    Numeric,
    Integer(BTreeMap<String, f64>),
    OneHot(Vec<String>),
}

/// Parses CSV text from `reader` and applies `recipe`.
pub fn read_csv<R: Read>(reader: R, recipe: &IngestRecipe) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    recipe.validate(&header)?;

    let mut records = Vec::new();
    for rec in rdr.records() {
        records.push(rec?);
    }

    let target_idx = header
        .iter()
        .position(|h| *h == recipe.target_column)
        .ok_or_else(|| DataError::MissingTarget(recipe.target_column.clone()))?;
    let retained: Vec<usize> = (0..header.len())
        .filter(|&j| j != target_idx && !recipe.drop_columns.contains(&header[j]))
        .collect();

    let is_missing = |cell: &str| recipe.missing_markers.iter().any(|m| m == cell);
    let complete: Vec<&csv::StringRecord> = records
        .iter()
        .filter(|rec| {
            !retained
                .iter()
                .chain(std::iter::once(&target_idx))
                .any(|&j| is_missing(rec.get(j).unwrap_or("")))
        })
        .collect();
    let mut dropped = records.len() - complete.len();

    // Level sets come from the retained rows only.
    let mut plans = Vec::with_capacity(retained.len());
    let mut names = Vec::new();
    for &j in &retained {
        let name = &header[j];
        match recipe.categorical_columns.get(name) {
            None => {
                plans.push(ColumnPlan::Numeric);
                names.push(name.clone());
            }
            Some(Encoding::IntegerCode { levels }) => {
                let levels = match levels {
                    Some(l) => l.clone(),
                    None => sorted_levels(complete.iter().map(|r| r.get(j).unwrap_or(""))),
                };
                let map = levels
                    .into_iter()
                    .enumerate()
                    .map(|(i, l)| (l, (i + 1) as f64))
                    .collect();
                plans.push(ColumnPlan::Integer(map));
                names.push(name.clone());
            }
            Some(Encoding::OneHot) => {
                let levels = sorted_levels(complete.iter().map(|r| r.get(j).unwrap_or("")));
                names.extend(levels.iter().map(|l| format!("{name}={l}")));
                plans.push(ColumnPlan::OneHot(levels));
            }
        }
    }

    let n_cols = names.len();
    let mut features = Vec::with_capacity(complete.len() * n_cols);
    let mut target = Vec::with_capacity(complete.len());
    let mut row_buf = Vec::with_capacity(n_cols);
    for rec in complete {
        let line = rec.position().map_or(0, |p| p.line() as usize);
        row_buf.clear();
        for (plan, &j) in plans.iter().zip(&retained) {
            let cell = rec.get(j).unwrap_or("");
            match plan {
                ColumnPlan::Numeric => row_buf.push(parse_cell(cell, &header[j], line)?),
                ColumnPlan::Integer(map) => {
                    let code = map.get(cell).ok_or_else(|| DataError::UnknownLevel {
                        column: header[j].clone(),
                        value: cell.to_string(),
                    })?;
                    row_buf.push(*code);
                }
                ColumnPlan::OneHot(levels) => {
                    row_buf.extend(levels.iter().map(|l| if l == cell { 1.0 } else { 0.0 }));
                }
            }
        }
        let y = parse_cell(rec.get(target_idx).unwrap_or(""), &header[target_idx], line)?;
        if !y.is_finite() || row_buf.iter().any(|v| !v.is_finite()) {
            dropped += 1;
            continue;
        }
        features.extend_from_slice(&row_buf);
        target.push(y);
    }

    if target.is_empty() {
        return Err(DataError::AllRowsDropped { dropped });
    }
    let dataset = Dataset::from_flat(features, n_cols, target, names, recipe.target_column.clone())?;
    Ok(Ingested {
        dataset,
        dropped_rows: dropped,
    })
}

fn parse_cell(cell: &str, column: &str, line: usize) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| DataError::Parse {
        column: column.to_string(),
        value: cell.to_string(),
        line,
    })
}

/// Distinct values, numerically ordered when they all parse as numbers.
fn sorted_levels<'a>(values: impl Iterator<Item = &'a str>) -> Vec<String> {
    let set: BTreeSet<&str> = values.collect();
    let mut levels: Vec<String> = set.into_iter().map(str::to_string).collect();
    if levels.iter().all(|l| l.parse::<f64>().is_ok()) {
        levels.sort_by(|a, b| {
            let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
            x.total_cmp(&y).then_with(|| a.cmp(b))
        });
    }
    levels
}

/// Reads the named numeric columns, in the given order, as a row-major
/// matrix. Other columns are ignored; every selected cell must parse.
pub fn read_feature_matrix<R: Read>(reader: R, columns: &[String]) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let idx = columns
        .iter()
        .map(|c| {
            header
                .iter()
                .position(|h| h == c)
                .ok_or_else(|| DataError::UnknownColumn(c.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        for &j in &idx {
            out.push(parse_cell(rec.get(j).unwrap_or(""), &header[j], line)?);
        }
    }
    if out.is_empty() {
        return Err(DataError::Empty);
    }
    Ok(out)
}

/// Writes `ds` as CSV: feature columns followed by the target column.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = ds.feature_names.iter().map(String::as_str).collect();
    header.push(&ds.target_name);
    w.write_record(&header)?;
    for (row, y) in ds.rows().zip(&ds.target) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(y.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// A disjoint train/test partition of `0..n_rows`, each side ascending.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitIndices {
    pub train_rows: Vec<usize>,
    pub test_rows: Vec<usize>,
}

/// Uniformly random partition with `round(train_fraction * n_rows)` training
/// rows (kept within `1..n_rows`).
pub fn train_test_split<R: Rng + ?Sized>(
    n_rows: usize,
    train_fraction: f64,
    rng: &mut R,
) -> Result<SplitIndices> {
    if n_rows < 2 {
        return Err(DataError::TooFewRows {
            needed: 2,
            found: n_rows,
        });
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::BadFraction(train_fraction));
    }
    let n_train = ((train_fraction * n_rows as f64).round() as usize).clamp(1, n_rows - 1);
    let mut order: Vec<usize> = (0..n_rows).collect();
    order.shuffle(rng);
    let mut train_rows = order[..n_train].to_vec();
    let mut test_rows = order[n_train..].to_vec();
    train_rows.sort_unstable();
    test_rows.sort_unstable();
    Ok(SplitIndices {
        train_rows,
        test_rows,
    })
}

/// Per-column z-score parameters. Columns with zero spread are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Population standard deviations over the fitting rows.
    pub stdevs: Vec<f64>,
}

impl Standardizer {
    /// Fits means and population standard deviations over `rows` only.
    pub fn fit(ds: &Dataset, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(DataError::EmptySelection);
        }
        let p = ds.n_cols();
        let n = rows.len() as f64;
        let mut means = vec![0.0; p];
        for &r in rows {
            if r >= ds.n_rows() {
                return Err(DataError::RowOutOfRange(r));
            }
            for (m, v) in means.iter_mut().zip(ds.row(r)) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n;
        }
        let mut var = vec![0.0; p];
        for &r in rows {
            for ((s, v), m) in var.iter_mut().zip(ds.row(r)).zip(&means) {
                let d = v - m;
                *s += d * d;
            }
        }
        let stdevs = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { means, stdevs })
    }

    /// Fits over every row of `ds`.
    pub fn fit_all(ds: &Dataset) -> Result<Self> {
        let rows: Vec<usize> = (0..ds.n_rows()).collect();
        Self::fit(ds, &rows)
    }

    /// The identity transform for `p` columns.
    pub fn identity(p: usize) -> Self {
        Self {
            means: vec![0.0; p],
            stdevs: vec![1.0; p],
        }
    }

    pub fn n_cols(&self) -> usize {
        self.means.len()
    }

    pub fn is_constant(&self, col: usize) -> bool {
        self.stdevs[col] == 0.0
    }

    /// Standardizes one row into `out`.
    pub fn transform_row(&self, row: &[f64], out: &mut [f64]) {
        for (j, (o, v)) in out.iter_mut().zip(row).enumerate() {
            let centered = v - self.means[j];
            *o = if self.stdevs[j] == 0.0 {
                centered
            } else {
                centered / self.stdevs[j]
            };
        }
    }

    fn check(&self, ds: &Dataset) -> Result<()> {
        if ds.n_cols() != self.n_cols() {
            return Err(DataError::ColumnMismatch {
                expected: self.n_cols(),
                found: ds.n_cols(),
            });
        }
        Ok(())
    }

    /// Standardizes every feature column; the target is untouched.
    pub fn apply(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let mut out = vec![0.0; ds.features.len()];
        for (src, dst) in ds.rows().zip(out.chunks_exact_mut(ds.n_cols.max(1))) {
            self.transform_row(src, dst);
        }
        Ok(ds.with_features(out))
    }

    /// Undoes [`Standardizer::apply`].
    pub fn invert(&self, ds: &Dataset) -> Result<Dataset> {
        self.check(ds)?;
        let p = ds.n_cols();
        let out = ds
            .features
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let j = i % p;
                let scaled = if self.stdevs[j] == 0.0 {
                    *v
                } else {
                    v * self.stdevs[j]
                };
                scaled + self.means[j]
            })
            .collect();
        Ok(ds.with_features(out))
    }
}
