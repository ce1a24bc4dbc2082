//! Command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! failures while running.

use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};
use proto_extract_core::oracle::{Label, LinearModel, Oracle, Target};
use proto_extract_core::surrogate::{fidelity, PrototypeSurrogate};
use proto_extract_core::Point;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, CfMethod, ExperimentConfig};
use crate::data::{read_points_csv, write_points_csv, Dataset};
use crate::error::{Error, Result};
use crate::harness::{self, cf_config_for, extract, prepare_data, setup_trial, trial_seed};
use crate::report;
use crate::selftest;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "proto-extract",
    version,
    about = "Classifier extraction from one-sided counterfactual queries"
)]
pub struct Cli {
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Dotted config override, e.g. `prototype.gamma=0.5`. Repeatable.
    #[arg(long = "override", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Trials run in parallel.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// More log output; repeat for more.
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the target model of one trial and write its data splits.
    TrainTarget {
        #[arg(long, default_value_t = 0)]
        trial: usize,
    },
    /// Query a saved target for counterfactuals of the rows of a CSV file.
    GenCf {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_cf_method, default_value = "mccf_l2")]
        cf_method: CfMethod,
    },
    /// Run one trial and save the fitted surrogates.
    Extract {
        #[arg(long, default_value_t = 0)]
        trial: usize,
        /// Query budget; defaults to the largest configured budget.
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long, value_parser = parse_cf_method)]
        cf_method: Option<CfMethod>,
    },
    /// Fidelity of a saved surrogate against a saved target on a CSV file.
    Evaluate {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        surrogate: PathBuf,
        #[arg(long)]
        input: PathBuf,
    },
    /// Run every trial, budget and method of the configuration.
    Sweep,
    /// Check the solvers against hand-computed values.
    Selftest,
}

fn parse_cf_method(s: &str) -> std::result::Result<CfMethod, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        format!("unknown counterfactual method `{s}` (mccf_l2, mccf_l1, nearest_neighbor)")
    })
}

/// Either kind of saved surrogate.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SavedSurrogate {
    Linear(LinearModel),
    Prototype(PrototypeSurrogate),
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();

    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_usage() {
                EXIT_USAGE
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn require_config(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| Error::Config("this command needs --config".into()))?;
    load_config(path, &cli.overrides)
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    Ok(&cli.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

fn write_dataset(path: &Path, ds: &Dataset) -> Result<()> {
    write_points_csv(path, &ds.feature_names, &ds.features, Some(&ds.labels))
}

fn execute(cli: &Cli) -> Result<i32> {
    match &cli.command {
        Command::Selftest => {
            let checks = selftest::run_checks(&selftest::EXPECTED);
            for c in &checks {
                println!("{c}");
            }
            Ok(if checks.iter().all(|c| c.passed()) {
                EXIT_OK
            } else {
                EXIT_RUNTIME
            })
        }
        Command::Sweep => {
            let cfg = require_config(cli)?;
            let out = out_dir(cli)?;
            let report = harness::run_experiment(&cfg, cli.jobs)?;
            if let Some(r) = &report.load_report {
                eprintln!("{r}");
            }
            write_json(&out.join("resolved_config.json"), &cfg)?;
            report::write_json(&out.join("report.json"), &report)?;
            report::write_csv(&out.join("report.csv"), &report)?;
            let table = report::render_table(&report);
            std::fs::write(out.join("table.txt"), &table)
                .map_err(|e| Error::io(out.join("table.txt"), e))?;
            print!("{table}");
            Ok(EXIT_OK)
        }
        Command::TrainTarget { trial } => {
            let cfg = require_config(cli)?;
            let out = out_dir(cli)?;
            let data = prepare_data(&cfg)?;
            if let Some(r) = &data.load_report {
                eprintln!("{r}");
            }
            let setup = setup_trial(&cfg, &data, trial_seed(cfg.master_seed, *trial))?;
            write_json(&out.join("target.json"), &setup.target)?;
            write_dataset(&out.join("train.csv"), &setup.train)?;
            write_dataset(&out.join("query_pool.csv"), &setup.query_pool)?;
            write_dataset(&out.join("ref.csv"), &setup.reference)?;
            write_json(&out.join("resolved_config.json"), &cfg)?;
            let train_acc = agreement(&setup.target, &setup.train)?;
            println!(
                "target trained on {} rows (train accuracy {:.4}); wrote {}",
                setup.train.len(),
                train_acc,
                out.display()
            );
            Ok(EXIT_OK)
        }
        Command::GenCf {
            target,
            input,
            cf_method,
        } => {
            let model: LinearModel = read_json(target)?;
            let (names, points) = read_points_csv(input)?;
            let base = match &cli.config {
                Some(p) => load_config(p, &cli.overrides)?.counterfactual,
                None => Default::default(),
            };
            let mut cf = proto_extract_core::CfConfig {
                cost: cf_method.cost(),
                ..base
            };
            if *cf_method == CfMethod::NearestNeighbor {
                let mut pool = Vec::new();
                for x in &points {
                    if model.predict_label(x)? == Label::One {
                        pool.push(x.clone());
                    }
                }
                cf.neighbor_pool = Some(pool);
            }
            let oracle = Oracle::new(&model, &cf);
            let out = out_dir(cli)?;
            let path = out.join("counterfactuals.csv");
            let csv_err = |e| Error::Csv {
                path: path.clone(),
                source: e,
            };
            let mut w = csv::Writer::from_path(&path).map_err(csv_err)?;
            let mut header = vec!["row".to_string(), "label".to_string()];
            header.extend(names.iter().map(|n| format!("cf_{n}")));
            w.write_record(&header).map_err(csv_err)?;
            let mut n_cf = 0;
            for (i, x) in points.iter().enumerate() {
                let r = oracle.query(x)?;
                let mut rec = vec![i.to_string(), r.label.as_u8().to_string()];
                match &r.counterfactual {
                    Some(c) => {
                        n_cf += 1;
                        rec.extend(c.iter().map(f64::to_string));
                    }
                    None => rec.extend(std::iter::repeat_n(String::new(), names.len())),
                }
                w.write_record(&rec).map_err(csv_err)?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
            println!(
                "{} queries, {n_cf} counterfactuals; wrote {}",
                oracle.queries(),
                path.display()
            );
            Ok(EXIT_OK)
        }
        Command::Extract {
            trial,
            budget,
            cf_method,
        } => {
            let cfg = require_config(cli)?;
            let budget = budget.unwrap_or(cfg.max_budget());
            let cf_method = cf_method.unwrap_or(cfg.cf_methods[0]);
            let cfg = ExperimentConfig {
                query_budgets: vec![budget],
                cf_methods: vec![cf_method],
                ..cfg
            };
            cfg.validate()?;
            let out = out_dir(cli)?;
            let data = prepare_data(&cfg)?;
            if let Some(r) = &data.load_report {
                eprintln!("{r}");
            }
            let seed = trial_seed(cfg.master_seed, *trial);
            let setup = setup_trial(&cfg, &data, seed)?;
            let cf = cf_config_for(&cfg, cf_method, &setup.target, &setup.train)?;
            let oracle = Oracle::new(&setup.target, &cf);
            let queries: Vec<Point> = setup
                .query_order
                .iter()
                .map(|&i| setup.query_pool.features[i].clone())
                .collect();
            let ex = extract(&oracle, &queries, &cfg, harness::prototype_seed(seed))?;

            write_json(&out.join("target.json"), &setup.target)?;
            write_dataset(&out.join("ref.csv"), &setup.reference)?;
            write_json(&out.join("query_dataset.json"), &ex.dataset)?;
            write_json(&out.join("resolved_config.json"), &cfg)?;
            println!(
                "{} queries, {} counterfactuals",
                ex.queries,
                ex.dataset.d_cf.len()
            );
            let refs = &setup.reference.features;
            let mut failed = false;
            for (tau, s) in &ex.prototypes {
                let label = harness::prototype_label(*tau);
                match s {
                    Ok(s) => {
                        let file = if *tau == 0.0 {
                            "prototype.json".to_string()
                        } else {
                            format!("prototype_tau{tau}.json")
                        };
                        write_json(&out.join(file), s)?;
                        println!("{label}: fidelity {:.4}", fidelity(&setup.target, s, refs)?);
                    }
                    Err(e) => {
                        failed = true;
                        eprintln!("{label}: fit failed: {e}");
                    }
                }
            }
            if let Some(b1) = &ex.baseline1 {
                match b1 {
                    Ok(m) => {
                        write_json(&out.join("baseline1.json"), m)?;
                        println!(
                            "baseline1: fidelity {:.4}",
                            fidelity(&setup.target, m, refs)?
                        );
                    }
                    Err(e) => {
                        failed = true;
                        eprintln!("baseline1: fit failed: {e}");
                    }
                }
            }
            Ok(if failed { EXIT_RUNTIME } else { EXIT_OK })
        }
        Command::Evaluate {
            target,
            surrogate,
            input,
        } => {
            let model: LinearModel = read_json(target)?;
            let sur: SavedSurrogate = read_json(surrogate)?;
            let (_, points) = read_points_csv(input)?;
            let f = match &sur {
                SavedSurrogate::Linear(m) => fidelity(&model, m, &points)?,
                SavedSurrogate::Prototype(p) => fidelity(&model, p, &points)?,
            };
            println!("fidelity {f:.6} on {} points", points.len());
            Ok(EXIT_OK)
        }
    }
}

fn agreement(model: &LinearModel, ds: &Dataset) -> Result<f64> {
    let mut hits = 0;
    for (x, y) in ds.features.iter().zip(&ds.labels) {
        if model.predict_label(x)? == *y {
            hits += 1;
        }
    }
    Ok(hits as f64 / ds.len().max(1) as f64)
}
