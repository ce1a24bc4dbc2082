//! Report writers: full JSON, a flat CSV and a plain-text table.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::CfMethod;
use crate::error::{Error, Result};
use crate::harness::{CellSummary, FidelityReport};

/// Half-width, in percentage points, of the band around reference values.
pub const REFERENCE_BAND: f64 = 5.0;

/// Reference mean fidelities (percent) as (budget, baseline1, prototype).
struct ReferenceRow {
    dataset: &'static str,
    values: [(usize, f64, f64); 3],
}

const REFERENCE: [ReferenceRow; 4] = [
    ReferenceRow {
        dataset: "adult",
        values: [(500, 91.0, 96.0), (400, 89.0, 94.0), (300, 87.0, 93.0)],
    },
    ReferenceRow {
        dataset: "compas",
        values: [(500, 92.0, 96.0), (400, 90.0, 94.0), (300, 88.0, 94.0)],
    },
    ReferenceRow {
        dataset: "dccc",
        values: [(500, 89.0, 97.0), (400, 87.0, 95.0), (300, 85.0, 93.0)],
    },
    ReferenceRow {
        dataset: "heloc",
        values: [(500, 91.0, 95.0), (400, 89.0, 93.0), (300, 87.0, 93.0)],
    },
];

/// Reference value for a cell, if one exists for this dataset, method and budget.
pub fn reference_value(
    dataset: &str,
    method: &str,
    cf_method: CfMethod,
    budget: usize,
) -> Option<f64> {
    if cf_method != CfMethod::MccfL2 {
        return None;
    }
    let name = dataset.to_ascii_lowercase();
    let row = REFERENCE.iter().find(|r| name.contains(r.dataset))?;
    let &(_, b1, ours) = row.values.iter().find(|v| v.0 == budget)?;
    match method {
        "baseline1" => Some(b1),
        "prototype" => Some(ours),
        _ => None,
    }
}

pub fn write_json(path: &Path, report: &FidelityReport) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json(path: &Path) -> Result<FidelityReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub const CSV_HEADER: [&str; 7] = [
    "dataset",
    "method",
    "cf_method",
    "budget",
    "mean",
    "std",
    "n_trials",
];

pub fn write_csv(path: &Path, report: &FidelityReport) -> Result<()> {
    let csv_err = |e| Error::Csv {
        path: path.to_path_buf(),
        source: e,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for c in &report.cells {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        w.write_record([
            c.dataset.clone(),
            c.method.clone(),
            c.cf_method.to_string(),
            c.budget.to_string(),
            opt(c.mean),
            opt(c.std),
            c.n_trials.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn percent(c: &CellSummary) -> String {
    match (c.mean, c.std) {
        (Some(m), Some(s)) => format!("{:.1} ± {:.1}", 100.0 * m, 100.0 * s),
        (Some(m), None) => format!("{:.1}", 100.0 * m),
        _ => "n/a".into(),
    }
}

/// Methods as rows, budgets as columns, mean ± std in percent.
pub fn render_table(report: &FidelityReport) -> String {
    let budgets = &report.config.query_budgets;
    let mut rows: Vec<(String, Vec<String>)> = Vec::new();
    let mut seen = Vec::new();
    for c in &report.cells {
        let label = format!("{} / {}", c.method, c.cf_method);
        if !seen.contains(&label) {
            seen.push(label.clone());
            let cells = budgets
                .iter()
                .map(|&b| {
                    report
                        .cells
                        .iter()
                        .find(|x| {
                            x.method == c.method && x.cf_method == c.cf_method && x.budget == b
                        })
                        .map_or_else(|| "n/a".into(), percent)
                })
                .collect();
            rows.push((label, cells));
        }
    }

    let mut header = vec![format!(
        "{} ({} trials)",
        report.dataset, report.config.n_trials
    )];
    header.extend(budgets.iter().map(|b| format!("{b} queries")));
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for (label, cells) in &rows {
        widths[0] = widths[0].max(label.chars().count());
        for (w, c) in widths[1..].iter_mut().zip(cells) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cols: &[String]| -> String {
        let mut s = String::new();
        for (i, (c, w)) in cols.iter().zip(&widths).enumerate() {
            let pad = w - c.chars().count();
            if i == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.trim_end().to_string()
    };

    let mut out = String::new();
    out.push_str(&line(&header));
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for (label, cells) in &rows {
        let mut cols = vec![label.clone()];
        cols.extend(cells.iter().cloned());
        out.push_str(&line(&cols));
        out.push('\n');
    }

    let absent: Vec<&CellSummary> = report.cells.iter().filter(|c| c.mean.is_none()).collect();
    if !absent.is_empty() {
        out.push_str("\nmissing cells:\n");
        for c in absent {
            let _ = writeln!(
                out,
                "  {} / {} @ {}: {}",
                c.method,
                c.cf_method,
                c.budget,
                c.absent_reason.as_deref().unwrap_or("unknown")
            );
        }
    }

    let comparisons: Vec<String> = report
        .cells
        .iter()
        .filter_map(|c| {
            let r = reference_value(&c.dataset, &c.method, c.cf_method, c.budget)?;
            let m = 100.0 * c.mean?;
            let status = if (m - r).abs() <= REFERENCE_BAND {
                "within"
            } else {
                "outside"
            };
            Some(format!(
                "  {} @ {}: {m:.1} vs reference {r:.0} ({status} ±{REFERENCE_BAND:.0})",
                c.method, c.budget
            ))
        })
        .collect();
    if !comparisons.is_empty() {
        out.push_str("\nreference comparison (informational):\n");
        for c in comparisons {
            out.push_str(&c);
            out.push('\n');
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_lookup() {
        assert_eq!(
            reference_value("Adult", "prototype", CfMethod::MccfL2, 500),
            Some(96.0)
        );
        assert_eq!(
            reference_value("heloc_dataset", "baseline1", CfMethod::MccfL2, 300),
            Some(87.0)
        );
        assert_eq!(
            reference_value("adult", "prototype", CfMethod::MccfL1, 500),
            None
        );
        assert_eq!(
            reference_value("adult", "prototype", CfMethod::MccfL2, 100),
            None
        );
        assert_eq!(
            reference_value("gaussian_blobs", "prototype", CfMethod::MccfL2, 500),
            None
        );
    }
}
