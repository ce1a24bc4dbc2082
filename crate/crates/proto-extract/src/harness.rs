//! Extraction experiments: train a target, spend query budgets through the
//! oracle, fit surrogates and score fidelity over repeated trials.
//!
//! Within a trial the target and the query order are shared by every budget
//! and counterfactual method; smaller budgets query a prefix of the larger
//! ones, so budget comparisons are paired.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use proto_extract_core::counterfactual::CfConfig;
use proto_extract_core::oracle::{train_logistic, Label, LinearModel, Oracle, Target};
use proto_extract_core::surrogate::{
    build_query_dataset, fidelity, fit_baseline1, PrototypeSurrogate, QueryDataset,
};
use proto_extract_core::{Point, PrototypeFitConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{CfMethod, DatasetSource, ExperimentConfig, Method};
use crate::data::{self, balance_classes, load_csv, make_synthetic, Dataset, LoadReport, Schema};
use crate::error::{Error, Result};

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of trial `index`: the `index`-th output of a SplitMix64 stream
/// started at `master`, so any trial can be re-run on its own.
pub fn trial_seed(master: u64, index: usize) -> u64 {
    mix(master.wrapping_add((index as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

/// Independent sub-seed for one purpose inside a trial.
fn sub_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ mix(stream.wrapping_add(0x632b_e59b_d9b4_e019)))
}

const STREAM_SPLIT: u64 = 1;
const STREAM_QUERY_ORDER: u64 = 2;
const STREAM_PROTOTYPE: u64 = 3;
const STREAM_BALANCE: u64 = 4;

/// The dataset an experiment draws its splits from.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: String,
    pub dataset: Dataset,
    pub load_report: Option<LoadReport>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let name = cfg.dataset.name();
    match &cfg.dataset {
        DatasetSource::Synthetic(spec) => Ok(PreparedData {
            name,
            dataset: make_synthetic(spec)?,
            load_report: None,
        }),
        DatasetSource::Csv(src) => {
            let schema = Schema::from_path(&src.schema)?;
            if let Some(w) = &schema.warning {
                log::warn!("{}: {w}", src.schema.display());
            }
            let (mut ds, report) = load_csv(&src.path, &schema)?;
            if src.balance {
                ds = balance_classes(&ds, sub_seed(cfg.master_seed, STREAM_BALANCE))?;
            }
            Ok(PreparedData {
                name: schema.name.clone().unwrap_or(name),
                dataset: ds,
                load_report: Some(report),
            })
        }
    }
}

/// Seed for prototype initialisation in a trial with seed `seed`.
pub fn prototype_seed(seed: u64) -> u64 {
    sub_seed(seed, STREAM_PROTOTYPE)
}

/// Report label for a prototype surrogate with margin `tau`.
pub fn prototype_label(tau: f64) -> String {
    if tau == 0.0 {
        Method::Prototype.to_string()
    } else {
        format!("{}(tau={tau})", Method::Prototype)
    }
}

/// Surrogates fitted from one query set.
#[derive(Debug, Clone)]
pub struct Extraction {
    pub queries: usize,
    pub dataset: QueryDataset,
    pub prototypes: Vec<(f64, std::result::Result<PrototypeSurrogate, String>)>,
    pub baseline1: Option<std::result::Result<LinearModel, String>>,
}

/// Issues every point of `queries` to the oracle and fits the requested
/// surrogates. Nothing but the oracle's answers reaches the fitting code.
pub fn extract(
    oracle: &Oracle<'_>,
    queries: &[Point],
    cfg: &ExperimentConfig,
    prototype_seed: u64,
) -> Result<Extraction> {
    let before = oracle.queries();
    let responses = queries
        .iter()
        .map(|x| oracle.query(x))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let issued = oracle.queries() - before;
    if issued != queries.len() {
        return Err(Error::Data(format!(
            "oracle counted {issued} queries for a budget of {}",
            queries.len()
        )));
    }
    let qd = build_query_dataset(queries.iter().map(Vec::as_slice).zip(&responses))?;

    let mut prototypes = Vec::new();
    let mut baseline1 = None;
    for method in &cfg.methods {
        match method {
            Method::Prototype => {
                let pcfg = PrototypeFitConfig {
                    seed: cfg.prototype.seed ^ prototype_seed,
                    ..cfg.prototype.clone()
                };
                // The fit does not depend on τ; only the decision rule does.
                let fitted = PrototypeSurrogate::fit(&qd, &pcfg, 0.0);
                for &tau in &cfg.taus {
                    let s = fitted
                        .as_ref()
                        .map(|s| PrototypeSurrogate {
                            prototypes: s.prototypes.clone(),
                            tau,
                        })
                        .map_err(|e| e.to_string());
                    prototypes.push((tau, s));
                }
            }
            Method::Baseline1 => {
                baseline1 = Some(fit_baseline1(&qd, &cfg.target).map_err(|e| e.to_string()));
            }
        }
    }
    Ok(Extraction {
        queries: issued,
        dataset: qd,
        prototypes,
        baseline1,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CellKey {
    pub cf_method: CfMethod,
    pub method: String,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialCell {
    pub key: CellKey,
    pub fidelity: std::result::Result<f64, String>,
    pub queries: usize,
    pub counterfactuals: usize,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub target: LinearModel,
    pub target_ref_positive_rate: f64,
    pub cells: Vec<TrialCell>,
}

/// Target model plus the three data parts of one trial.
pub struct TrialSetup {
    pub target: LinearModel,
    pub train: Dataset,
    pub query_pool: Dataset,
    pub reference: Dataset,
    /// Query pool in the trial's query order.
    pub query_order: Vec<usize>,
}

pub fn setup_trial(cfg: &ExperimentConfig, data: &PreparedData, seed: u64) -> Result<TrialSetup> {
    let (train, query_pool, reference) = data::split(
        &data.dataset,
        &cfg.split.with_seed(sub_seed(seed, STREAM_SPLIT)),
    )?;
    let budget = cfg.max_budget();
    if budget > query_pool.len() {
        return Err(Error::BudgetExceedsPool {
            budget,
            pool: query_pool.len(),
        });
    }
    let target = train_logistic(&train.features, &train.labels, &cfg.target)?;
    let mut query_order: Vec<usize> = (0..query_pool.len()).collect();
    query_order.shuffle(&mut ChaCha8Rng::seed_from_u64(sub_seed(
        seed,
        STREAM_QUERY_ORDER,
    )));
    query_order.truncate(budget);
    Ok(TrialSetup {
        target,
        train,
        query_pool,
        reference,
        query_order,
    })
}

/// Counterfactual settings for `method`; the nearest-neighbour pool is the
/// training rows the target assigns to class 1.
pub fn cf_config_for(
    cfg: &ExperimentConfig,
    method: CfMethod,
    target: &LinearModel,
    train: &Dataset,
) -> Result<CfConfig> {
    let mut cf = CfConfig {
        cost: method.cost(),
        ..cfg.counterfactual.clone()
    };
    if method == CfMethod::NearestNeighbor {
        let mut pool = Vec::new();
        for x in &train.features {
            if target.predict_label(x)? == Label::One {
                pool.push(x.clone());
            }
        }
        cf.neighbor_pool = Some(pool);
    }
    Ok(cf)
}

pub fn run_trial(cfg: &ExperimentConfig, data: &PreparedData, trial: usize) -> Result<TrialResult> {
    let seed = trial_seed(cfg.master_seed, trial);
    let setup = setup_trial(cfg, data, seed)?;
    let reference = &setup.reference.features;
    let positives = reference
        .iter()
        .map(|x| setup.target.predict_label(x))
        .collect::<std::result::Result<Vec<_>, _>>()?
        .into_iter()
        .filter(|l| *l == Label::One)
        .count();

    let mut cells = Vec::new();
    for &cf_method in &cfg.cf_methods {
        let cf = cf_config_for(cfg, cf_method, &setup.target, &setup.train)?;
        for &budget in &cfg.query_budgets {
            let started = Instant::now();
            let queries: Vec<Point> = setup.query_order[..budget]
                .iter()
                .map(|&i| setup.query_pool.features[i].clone())
                .collect();
            let oracle = Oracle::new(&setup.target, &cf);
            let key = |method: String| CellKey {
                cf_method,
                method,
                budget,
            };
            let extraction = match extract(&oracle, &queries, cfg, prototype_seed(seed)) {
                Ok(e) => e,
                Err(e) => {
                    let msg = e.to_string();
                    for label in method_labels(cfg) {
                        cells.push(TrialCell {
                            key: key(label),
                            fidelity: Err(msg.clone()),
                            queries: oracle.queries(),
                            counterfactuals: 0,
                            wall_time_ms: 0.0,
                        });
                    }
                    continue;
                }
            };
            let query_ms = started.elapsed().as_secs_f64() * 1e3;
            let n_cf = extraction.dataset.d_cf.len();

            for (tau, fitted) in &extraction.prototypes {
                let t0 = Instant::now();
                let fid = fitted
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|s| fidelity(&setup.target, s, reference).map_err(|e| e.to_string()));
                cells.push(TrialCell {
                    key: key(prototype_label(*tau)),
                    fidelity: fid,
                    queries: extraction.queries,
                    counterfactuals: n_cf,
                    wall_time_ms: query_ms + t0.elapsed().as_secs_f64() * 1e3,
                });
            }
            if let Some(b1) = &extraction.baseline1 {
                let t0 = Instant::now();
                let fid = b1
                    .as_ref()
                    .map_err(Clone::clone)
                    .and_then(|m| fidelity(&setup.target, m, reference).map_err(|e| e.to_string()));
                cells.push(TrialCell {
                    key: key(Method::Baseline1.to_string()),
                    fidelity: fid,
                    queries: extraction.queries,
                    counterfactuals: n_cf,
                    wall_time_ms: query_ms + t0.elapsed().as_secs_f64() * 1e3,
                });
            }
        }
    }

    Ok(TrialResult {
        trial,
        seed,
        target: setup.target,
        target_ref_positive_rate: positives as f64 / reference.len() as f64,
        cells,
    })
}

/// Method labels in report order.
pub fn method_labels(cfg: &ExperimentConfig) -> Vec<String> {
    let mut out = Vec::new();
    for m in &cfg.methods {
        match m {
            Method::Prototype => out.extend(cfg.taus.iter().map(|&t| prototype_label(t))),
            Method::Baseline1 => out.push(Method::Baseline1.to_string()),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub dataset: String,
    pub method: String,
    pub cf_method: CfMethod,
    pub budget: usize,
    /// Mean fidelity over successful trials; absent when every trial failed.
    pub mean: Option<f64>,
    /// Sample standard deviation; absent with fewer than two values.
    pub std: Option<f64>,
    pub n_trials: usize,
    pub trials: Vec<usize>,
    pub values: Vec<f64>,
    pub query_counts: Vec<usize>,
    pub counterfactual_counts: Vec<usize>,
    pub failures: Vec<TrialFailure>,
    pub absent_reason: Option<String>,
    pub wall_time_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    pub dataset: String,
    pub config: ExperimentConfig,
    pub load_report: Option<LoadReport>,
    pub trial_seeds: Vec<u64>,
    pub failed_trials: Vec<TrialFailure>,
    pub cells: Vec<CellSummary>,
    pub wall_time_ms: f64,
}

pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (Some(mean), std)
}

/// Runs every trial (up to `jobs` at once) and aggregates per-cell results.
/// Output does not depend on `jobs` or scheduling.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Result<FidelityReport> {
    cfg.validate()?;
    let started = Instant::now();
    let data = prepare_data(cfg)?;
    let (_, pool, _) = cfg.split.with_seed(0).sizes(data.dataset.len());
    if cfg.max_budget() > pool {
        return Err(Error::BudgetExceedsPool {
            budget: cfg.max_budget(),
            pool,
        });
    }

    let n = cfg.n_trials;
    let results: Mutex<Vec<Option<Result<TrialResult>>>> =
        Mutex::new((0..n).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = jobs.clamp(1, n);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= n {
                    break;
                }
                let r = run_trial(cfg, &data, i);
                if let Err(e) = &r {
                    log::warn!("trial {i} failed: {e}");
                } else {
                    log::debug!("trial {i} done");
                }
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results: Vec<Result<TrialResult>> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every trial index is claimed once"))
        .collect();

    let mut failed_trials = Vec::new();
    let mut ok = Vec::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(t) => ok.push(t),
            Err(e @ Error::BudgetExceedsPool { .. }) => return Err(e),
            Err(e) => failed_trials.push(TrialFailure {
                trial: i,
                error: e.to_string(),
            }),
        }
    }

    let mut cells = Vec::new();
    for &cf_method in &cfg.cf_methods {
        for method in method_labels(cfg) {
            for &budget in &cfg.query_budgets {
                let key = CellKey {
                    cf_method,
                    method: method.clone(),
                    budget,
                };
                let mut summary = CellSummary {
                    dataset: data.name.clone(),
                    method: method.clone(),
                    cf_method,
                    budget,
                    mean: None,
                    std: None,
                    n_trials: 0,
                    trials: vec![],
                    values: vec![],
                    query_counts: vec![],
                    counterfactual_counts: vec![],
                    failures: failed_trials.clone(),
                    absent_reason: None,
                    wall_time_ms: 0.0,
                };
                for t in &ok {
                    for c in t.cells.iter().filter(|c| c.key == key) {
                        summary.wall_time_ms += c.wall_time_ms;
                        match &c.fidelity {
                            Ok(f) => {
                                summary.trials.push(t.trial);
                                summary.values.push(*f);
                                summary.query_counts.push(c.queries);
                                summary.counterfactual_counts.push(c.counterfactuals);
                            }
                            Err(e) => summary.failures.push(TrialFailure {
                                trial: t.trial,
                                error: e.clone(),
                            }),
                        }
                    }
                }
                summary.failures.sort_by_key(|f| f.trial);
                summary.n_trials = summary.values.len();
                let (mean, std) = mean_std(&summary.values);
                summary.mean = mean;
                summary.std = std;
                if mean.is_none() {
                    summary.absent_reason = Some(
                        summary
                            .failures
                            .first()
                            .map_or_else(|| "no trials ran".into(), |f| f.error.clone()),
                    );
                }
                cells.push(summary);
            }
        }
    }

    Ok(FidelityReport {
        dataset: data.name,
        config: cfg.clone(),
        load_report: data.load_report,
        trial_seeds: (0..n).map(|i| trial_seed(cfg.master_seed, i)).collect(),
        failed_trials,
        cells,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

impl FidelityReport {
    pub fn cell(&self, method: &str, cf_method: CfMethod, budget: usize) -> Option<&CellSummary> {
        self.cells
            .iter()
            .find(|c| c.method == method && c.cf_method == cf_method && c.budget == budget)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::parse_config;

    fn small(extra: &[&str]) -> ExperimentConfig {
        let text = r#"{
            "dataset": {"synthetic": {"kind": "gaussian_blobs", "n": 600, "d": 3, "separation": 4.0, "seed": 1}},
            "query_budgets": [60, 40],
            "n_trials": 2,
            "prototype": {"k": 10}
        }"#;
        let ov: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        parse_config(text, &ov, None).unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let a: Vec<u64> = (0..100).map(|i| trial_seed(7, i)).collect();
        let mut b = a.clone();
        b.sort();
        b.dedup();
        assert_eq!(b.len(), 100);
        assert_eq!(trial_seed(7, 3), a[3]);
        assert_ne!(trial_seed(8, 3), a[3]);
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[0.9, 1.0]);
        assert!((m.unwrap() - 0.95).abs() < 1e-15);
        assert!((s.unwrap() - (0.005f64).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[0.5]), (Some(0.5), None));
        assert_eq!(mean_std(&[]), (None, None));
    }

    #[test]
    fn nested_budgets_and_exact_query_counts() {
        let cfg = small(&[]);
        let data = prepare_data(&cfg).unwrap();
        let setup = setup_trial(&cfg, &data, trial_seed(0, 0)).unwrap();
        assert_eq!(setup.query_order.len(), 60);
        let t = run_trial(&cfg, &data, 0).unwrap();
        for c in &t.cells {
            assert_eq!(c.queries, c.key.budget);
            let f = c.fidelity.as_ref().unwrap();
            assert!((0.0..=1.0).contains(f));
        }
        assert_eq!(t.cells.len(), 8);
    }

    #[test]
    fn single_method_single_budget() {
        let cfg = small(&[
            "methods=[\"prototype\"]",
            "query_budgets=[50]",
            "taus=[0.0]",
        ]);
        let data = prepare_data(&cfg).unwrap();
        let t = run_trial(&cfg, &data, 0).unwrap();
        assert_eq!(t.cells.len(), 1);
        assert!(t.cells[0].fidelity.is_ok());
    }

    #[test]
    fn oversized_budget_is_an_error() {
        let cfg = small(&["query_budgets=[1000000]"]);
        assert!(matches!(
            run_experiment(&cfg, 1),
            Err(Error::BudgetExceedsPool { .. })
        ));
    }

    #[test]
    fn reports_do_not_depend_on_jobs() {
        let cfg = small(&[]);
        let a = run_experiment(&cfg, 1).unwrap();
        let b = run_experiment(&cfg, 4).unwrap();
        assert_eq!(a.cells.len(), 8);
        for (x, y) in a.cells.iter().zip(&b.cells) {
            assert_eq!(x.values, y.values);
            assert_eq!(x.trials, y.trials);
            assert_eq!(x.n_trials, 2);
        }
    }

    #[test]
    fn failed_surrogates_are_recorded_not_fatal() {
        // With a tiny budget some trials see a single class.
        let cfg = small(&["query_budgets=[1]", "methods=[\"baseline1\"]"]);
        let report = run_experiment(&cfg, 1).unwrap();
        let cell = &report.cells[0];
        assert_eq!(cell.failures.len() + cell.n_trials, 2);
        assert!(!cell.failures.is_empty());
        if cell.n_trials == 0 {
            assert!(cell.absent_reason.is_some());
        }
    }
}
