//! Tabular datasets: CSV ingestion with a JSON schema sidecar, class
//! balancing, train/query/reference splits and synthetic generators.
//!
//! Every loaded or generated dataset has its features min-max scaled to
//! `[0, 1]`. Categorical columns are ordinal-encoded by first appearance.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use proto_extract_core::{Label, Point};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fraction of unparseable rows tolerated by [`load_csv`].
pub const MAX_UNPARSEABLE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Vec<Point>,
    pub labels: Vec<Label>,
    pub feature_names: Vec<String>,
    pub categorical_mask: Vec<bool>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn class_counts(&self) -> (usize, usize) {
        let ones = self.labels.iter().filter(|l| **l == Label::One).count();
        (self.len() - ones, ones)
    }

    fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: rows.iter().map(|&i| self.features[i].clone()).collect(),
            labels: rows.iter().map(|&i| self.labels[i]).collect(),
            feature_names: self.feature_names.clone(),
            categorical_mask: self.categorical_mask.clone(),
        }
    }
}

/// Sidecar describing how to read a CSV file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schema {
    /// Informational dataset name.
    #[serde(default)]
    pub name: Option<String>,
    pub target: String,
    /// Target values mapped to class 1. When absent the target column must
    /// hold 0/1.
    #[serde(default)]
    pub positive: Option<Vec<String>>,
    /// Feature columns to keep, in order. Defaults to every non-target,
    /// non-excluded column.
    #[serde(default)]
    pub columns: Option<Vec<String>>,
    #[serde(default)]
    pub exclude: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<String>,
    /// Cell values treated as missing (after trimming).
    #[serde(default = "default_missing")]
    pub missing: Vec<String>,
    /// Printed when the schema is loaded, e.g. for column lists that are
    /// only a default guess.
    #[serde(default)]
    pub warning: Option<String>,
}

fn default_missing() -> Vec<String> {
    ["", "?", "NA", "NaN", "nan", "null"]
        .into_iter()
        .map(String::from)
        .collect()
}

impl Schema {
    pub fn from_path(path: &Path) -> Result<Schema> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    pub path: PathBuf,
    pub rows_read: usize,
    pub dropped_missing: usize,
    pub dropped_unparseable: usize,
    pub rows_kept: usize,
}

impl fmt::Display for LoadReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "loaded {}: {} rows read, {} kept, {} dropped (missing), {} dropped (unparseable)",
            self.path.display(),
            self.rows_read,
            self.rows_kept,
            self.dropped_missing,
            self.dropped_unparseable
        )
    }
}

enum Cell {
    Num(f64),
    Cat(String),
}

/// Reads a CSV file (header row, comma separated) according to `schema`.
pub fn load_csv(path: &Path, schema: &Schema) -> Result<(Dataset, LoadReport)> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(String::from)
        .collect();
    if headers.is_empty() || headers.iter().all(String::is_empty) {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    let index_of = |name: &str| headers.iter().position(|h| h == name);
    let target_idx = index_of(&schema.target).ok_or_else(|| {
        Error::Data(format!(
            "{}: target column '{}' not found",
            path.display(),
            schema.target
        ))
    })?;

    let names: Vec<String> = match &schema.columns {
        Some(cols) => cols.clone(),
        None => headers
            .iter()
            .filter(|h| **h != schema.target && !schema.exclude.contains(h))
            .cloned()
            .collect(),
    };
    let mut col_idx = Vec::with_capacity(names.len());
    for name in &names {
        col_idx.push(index_of(name).ok_or_else(|| {
            Error::Data(format!("{}: column '{name}' not found", path.display()))
        })?);
    }
    for c in &schema.categorical {
        if !names.contains(c) {
            return Err(Error::Data(format!(
                "{}: categorical column '{c}' is not a selected feature",
                path.display()
            )));
        }
    }
    let categorical_mask: Vec<bool> = names
        .iter()
        .map(|n| schema.categorical.contains(n))
        .collect();
    if names.is_empty() {
        return Err(Error::Data(format!(
            "{}: no feature columns",
            path.display()
        )));
    }

    let mut report = LoadReport {
        path: path.to_path_buf(),
        ..Default::default()
    };
    let mut rows: Vec<(Vec<Cell>, Label)> = Vec::new();
    for record in reader.records() {
        report.rows_read += 1;
        let record = match record {
            Ok(r) => r,
            Err(_) => {
                report.dropped_unparseable += 1;
                continue;
            }
        };
        let get = |i: usize| record.get(i).unwrap_or("");
        let is_missing = |v: &str| schema.missing.iter().any(|m| m == v);
        if is_missing(get(target_idx)) || col_idx.iter().any(|&i| is_missing(get(i))) {
            report.dropped_missing += 1;
            continue;
        }
        let raw_target = get(target_idx);
        let label = match &schema.positive {
            Some(pos) => Some(Label::from(pos.iter().any(|p| p == raw_target))),
            None => match raw_target.parse::<f64>() {
                Ok(0.0) => Some(Label::Zero),
                Ok(1.0) => Some(Label::One),
                _ => None,
            },
        };
        let mut cells = Vec::with_capacity(col_idx.len());
        let mut ok = label.is_some();
        for (&i, &cat) in col_idx.iter().zip(&categorical_mask) {
            let v = get(i);
            if cat {
                cells.push(Cell::Cat(v.to_string()));
            } else {
                match v.parse::<f64>() {
                    Ok(x) if x.is_finite() => cells.push(Cell::Num(x)),
                    _ => {
                        ok = false;
                        break;
                    }
                }
            }
        }
        match (ok, label) {
            (true, Some(l)) => rows.push((cells, l)),
            _ => report.dropped_unparseable += 1,
        }
    }

    if report.rows_read == 0 {
        return Err(Error::Data(format!("{}: empty file", path.display())));
    }
    if report.dropped_unparseable as f64 > MAX_UNPARSEABLE_FRACTION * report.rows_read as f64 {
        return Err(Error::Data(format!(
            "{}: {} of {} rows unparseable (limit {:.0}%)",
            path.display(),
            report.dropped_unparseable,
            report.rows_read,
            MAX_UNPARSEABLE_FRACTION * 100.0
        )));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{}: no complete rows", path.display())));
    }
    report.rows_kept = rows.len();

    let mut codes: Vec<HashMap<String, usize>> = vec![HashMap::new(); names.len()];
    let mut features = Vec::with_capacity(rows.len());
    let mut labels = Vec::with_capacity(rows.len());
    for (cells, label) in rows {
        let x: Point = cells
            .into_iter()
            .enumerate()
            .map(|(j, c)| match c {
                Cell::Num(v) => v,
                Cell::Cat(s) => {
                    let next = codes[j].len();
                    *codes[j].entry(s).or_insert(next) as f64
                }
            })
            .collect();
        features.push(x);
        labels.push(label);
    }
    min_max_scale(&mut features);

    Ok((
        Dataset {
            features,
            labels,
            feature_names: names,
            categorical_mask,
        },
        report,
    ))
}

/// Scales every column to `[0, 1]`; constant columns become 0.
pub fn min_max_scale(features: &mut [Point]) {
    let Some(d) = features.first().map(Vec::len) else {
        return;
    };
    for j in 0..d {
        let (lo, hi) = features
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
                (lo.min(x[j]), hi.max(x[j]))
            });
        let range = hi - lo;
        for x in features.iter_mut() {
            x[j] = if range > 0.0 {
                ((x[j] - lo) / range).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

/// Subsamples the majority class without replacement down to the minority
/// size. Row order of the result follows the input.
pub fn balance_classes(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (n0, n1) = ds.class_counts();
    if n0 == 0 || n1 == 0 {
        return Err(Error::Data("cannot balance a single-class dataset".into()));
    }
    if n0 == n1 {
        return Ok(ds.clone());
    }
    let majority = if n0 > n1 { Label::Zero } else { Label::One };
    let mut majority_rows: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels[i] == majority)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    majority_rows.shuffle(&mut rng);
    majority_rows.truncate(n0.min(n1));
    let mut keep = vec![false; ds.len()];
    for i in majority_rows {
        keep[i] = true;
    }
    let rows: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.labels[i] != majority || keep[i])
        .collect();
    Ok(ds.subset(&rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSpec {
    pub train_frac: f64,
    pub query_frac: f64,
    pub ref_frac: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_frac: 0.5,
            query_frac: 0.3,
            ref_frac: 0.2,
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.train_frac, self.query_frac, self.ref_frac];
        if fr.iter().any(|f| !(*f > 0.0)) {
            return Err(Error::Config("split fractions must all be positive".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config("split fractions must sum to 1".into()));
        }
        Ok(())
    }

    /// Sizes of (train, query, ref) for `n` rows.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let train = (self.train_frac * n as f64).round() as usize;
        let query = ((self.query_frac * n as f64).round() as usize).min(n - train.min(n));
        let train = train.min(n);
        (train, query, n - train - query)
    }
}

/// Disjoint (train, query pool, reference) partition of shuffled rows.
pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset)> {
    spec.validate()?;
    let (nt, nq, nr) = spec.sizes(ds.len());
    if nt == 0 || nq == 0 || nr == 0 {
        return Err(Error::Data(format!(
            "split of {} rows leaves an empty part ({nt}/{nq}/{nr})",
            ds.len()
        )));
    }
    let mut idx: Vec<usize> = (0..ds.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
    Ok((
        ds.subset(&idx[..nt]),
        ds.subset(&idx[nt..nt + nq]),
        ds.subset(&idx[nt + nq..]),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticKind {
    /// Two unit-variance isotropic Gaussians at `±(separation/2)·e₁`.
    GaussianBlobs,
    /// Uniform points in the unit cube labelled by the hyperplane
    /// `Σ(xᵢ − ½) = 0`, with a band of half-width `separation/2` (measured
    /// along the normal) removed.
    LinearMargin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    pub n: usize,
    pub d: usize,
    pub separation: f64,
    #[serde(default)]
    pub seed: u64,
}

pub fn make_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n < 4 || spec.d < 1 {
        return Err(Error::Config(
            "synthetic data needs n >= 4 and d >= 1".into(),
        ));
    }
    if !(spec.separation >= 0.0) {
        return Err(Error::Config("separation must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (n, d) = (spec.n, spec.d);
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    match spec.kind {
        SyntheticKind::GaussianBlobs => {
            for i in 0..n {
                let label = Label::from(i >= n / 2);
                let center = if label == Label::One { 0.5 } else { -0.5 } * spec.separation;
                let mut x: Point = (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect();
                x[0] += center;
                features.push(x);
                labels.push(label);
            }
            min_max_scale(&mut features);
        }
        SyntheticKind::LinearMargin => {
            let half_band = 0.5 * spec.separation;
            let norm = (d as f64).sqrt();
            let mut attempts = 0usize;
            while features.len() < n {
                attempts += 1;
                if attempts > 1000 * n {
                    return Err(Error::Config(
                        "margin band leaves no room for points".into(),
                    ));
                }
                let x: Point = (0..d).map(|_| rng.random::<f64>()).collect();
                let s = x.iter().map(|v| v - 0.5).sum::<f64>() / norm;
                if s.abs() <= half_band {
                    continue;
                }
                labels.push(Label::from(s > 0.0));
                features.push(x);
            }
        }
    }
    Ok(Dataset {
        features,
        labels,
        feature_names: (0..d).map(|j| format!("x{j}")).collect(),
        categorical_mask: vec![false; d],
    })
}

/// Writes features (and labels) as a CSV with a header row.
pub fn write_points_csv(
    path: &Path,
    names: &[String],
    points: &[Point],
    labels: Option<&[Label]>,
) -> Result<()> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let mut header: Vec<String> = names.to_vec();
    if labels.is_some() {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, p) in points.iter().enumerate() {
        let mut row: Vec<String> = p.iter().map(|v| format!("{v:?}")).collect();
        if let Some(ls) = labels {
            row.push(ls[i].as_u8().to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a points CSV as written by [`write_points_csv`]. A trailing
/// `label` column, if present, is ignored.
pub fn read_points_csv(path: &Path) -> Result<(Vec<String>, Vec<Point>)> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let mut names: Vec<String> = r
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(String::from)
        .collect();
    let has_label = names.last().is_some_and(|n| n == "label");
    if has_label {
        names.pop();
    }
    let mut points = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let p = (0..names.len())
            .map(|j| {
                rec.get(j)
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| {
                        Error::Data(format!(
                            "{}: row {} column '{}' is not a number",
                            path.display(),
                            line + 2,
                            names[j]
                        ))
                    })
            })
            .collect::<Result<Point>>()?;
        points.push(p);
    }
    if points.is_empty() {
        return Err(Error::Data(format!("{}: no rows", path.display())));
    }
    Ok((names, points))
}
