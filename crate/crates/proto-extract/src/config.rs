//! Experiment configuration: a single JSON document, dotted `key=value`
//! overrides and the `PROTO_EXTRACT_SEED` environment override.

use std::fmt;
use std::path::{Path, PathBuf};

use proto_extract_core::{CfConfig, CfCost, PrototypeFitConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{SplitSpec, SyntheticSpec};
use crate::error::{Error, Result};

pub const SEED_ENV: &str = "PROTO_EXTRACT_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub path: PathBuf,
    /// Path to the JSON schema sidecar.
    pub schema: PathBuf,
    /// Subsample the majority class to the minority size.
    #[serde(default = "yes")]
    pub balance: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Csv(CsvSource),
    Synthetic(SyntheticSpec),
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::Csv(c) => c
                .path
                .file_stem()
                .map_or_else(|| "csv".into(), |s| s.to_string_lossy().into_owned()),
            DatasetSource::Synthetic(s) => match s.kind {
                crate::data::SyntheticKind::GaussianBlobs => "gaussian_blobs".into(),
                crate::data::SyntheticKind::LinearMargin => "linear_margin".into(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Prototype,
    Baseline1,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Prototype => "prototype",
            Method::Baseline1 => "baseline1",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfMethod {
    MccfL2,
    MccfL1,
    NearestNeighbor,
}

impl CfMethod {
    pub fn cost(self) -> CfCost {
        match self {
            CfMethod::MccfL2 => CfCost::L2,
            CfMethod::MccfL1 => CfCost::L1,
            CfMethod::NearestNeighbor => CfCost::NearestNeighbor,
        }
    }
}

impl fmt::Display for CfMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CfMethod::MccfL2 => "mccf_l2",
            CfMethod::MccfL1 => "mccf_l1",
            CfMethod::NearestNeighbor => "nearest_neighbor",
        })
    }
}

/// Split fractions; the shuffle seed is derived per trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitFractions {
    pub train_frac: f64,
    pub query_frac: f64,
    pub ref_frac: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        let s = SplitSpec::default();
        Self {
            train_frac: s.train_frac,
            query_frac: s.query_frac,
            ref_frac: s.ref_frac,
        }
    }
}

impl SplitFractions {
    pub fn with_seed(&self, seed: u64) -> SplitSpec {
        SplitSpec {
            train_frac: self.train_frac,
            query_frac: self.query_frac,
            ref_frac: self.ref_frac,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    #[serde(default)]
    pub split: SplitFractions,
    #[serde(default = "default_budgets")]
    pub query_budgets: Vec<usize>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_cf_methods")]
    pub cf_methods: Vec<CfMethod>,
    /// Margins of the prototype decision rule; one prototype cell per value.
    #[serde(default = "default_taus")]
    pub taus: Vec<f64>,
    #[serde(default)]
    pub prototype: PrototypeFitConfig,
    #[serde(default)]
    pub counterfactual: CfConfig,
    /// Logistic-regression settings for the target and for Baseline 1.
    #[serde(default)]
    pub target: TrainConfig,
    #[serde(default)]
    pub master_seed: u64,
}

fn default_budgets() -> Vec<usize> {
    vec![500, 400, 300]
}
fn default_trials() -> usize {
    10
}
fn default_methods() -> Vec<Method> {
    vec![Method::Prototype, Method::Baseline1]
}
fn default_cf_methods() -> Vec<CfMethod> {
    vec![CfMethod::MccfL2]
}
fn default_taus() -> Vec<f64> {
    vec![0.0, 0.01, 0.05]
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if self.query_budgets.is_empty() || self.query_budgets.contains(&0) {
            return bad("query_budgets must be a non-empty list of positive integers");
        }
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1");
        }
        if self.methods.is_empty() {
            return bad("methods must not be empty");
        }
        if self.cf_methods.is_empty() {
            return bad("cf_methods must not be empty");
        }
        if self.taus.is_empty() || self.taus.iter().any(|t| !(*t >= 0.0)) {
            return bad("taus must be a non-empty list of non-negative values");
        }
        self.split.with_seed(0).validate()?;
        self.prototype.validate()?;
        self.counterfactual.validate()?;
        Ok(())
    }

    pub fn max_budget(&self) -> usize {
        self.query_budgets.iter().copied().max().unwrap_or(0)
    }

    /// Resolves relative dataset paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        if let DatasetSource::Csv(c) = &mut self.dataset {
            if c.path.is_relative() {
                c.path = base.join(&c.path);
            }
            if c.schema.is_relative() {
                c.schema = base.join(&c.schema);
            }
        }
    }
}

/// Parses `key=value` where `value` is JSON or, failing that, a string.
pub fn parse_override(spec: &str) -> Result<(String, Value)> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{spec}' is not of the form key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(Error::Config(format!("override '{spec}' has an empty key")));
    }
    let value =
        serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().into()));
    Ok((key.to_string(), value))
}

/// Sets a dotted path in a JSON document, creating objects as needed.
pub fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!(
                "override '{key}': '{}' is not an object",
                parts[..i].join(".")
            ))
        })?;
        if i == parts.len() - 1 {
            obj.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry((*part).to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split always yields at least one part")
}

fn deserialize_value(doc: Value) -> Result<ExperimentConfig> {
    serde_path_to_error::deserialize(doc).map_err(|e| {
        let path = e.path().to_string();
        Error::Config(format!("at '{path}': {}", e.inner()))
    })
}

/// Parses config text and applies overrides and the seed environment
/// variable (passed explicitly so tests stay hermetic).
pub fn parse_config(
    text: &str,
    overrides: &[String],
    env_seed: Option<&str>,
) -> Result<ExperimentConfig> {
    let mut doc: Value = {
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(&mut de).map_err(|e| {
            let inner = e.inner();
            Error::Config(format!(
                "line {} column {}: {inner}",
                inner.line(),
                inner.column()
            ))
        })?
    };
    if overrides.is_empty() {
        // Unknown keys are reported with their line here.
        let mut de = serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize::<_, ExperimentConfig>(&mut de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.inner();
            Error::Config(format!(
                "line {} column {} at '{path}': {inner}",
                inner.line(),
                inner.column()
            ))
        })?;
    }
    for spec in overrides {
        let (k, v) = parse_override(spec)?;
        apply_override(&mut doc, &k, v)?;
    }
    if let Some(seed) = env_seed {
        let seed: u64 = seed.trim().parse().map_err(|_| {
            Error::Config(format!("{SEED_ENV}='{seed}' is not an unsigned integer"))
        })?;
        apply_override(&mut doc, "master_seed", Value::from(seed))?;
    }
    let cfg = deserialize_value(doc)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Loads a config file; relative dataset paths resolve against the file's
/// directory.
pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut cfg = parse_config(&text, overrides, env_seed.as_deref()).map_err(|e| match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    })?;
    if let Some(dir) = path.parent() {
        cfg.resolve_paths(dir);
    }
    Ok(cfg)
}
