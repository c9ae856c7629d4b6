//! Seed averaging, per-method Pareto fronts and the text summary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dvge_core::fairness::{pareto_front, TradeoffPoint};

use crate::error::{Error, Result};
use crate::io::{read_results, write_fronts, FrontRow, ResultRow};

/// Mean over seeds of one hyperparameter setting.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanPoint {
    pub method: String,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
    pub seeds: usize,
}

impl MeanPoint {
    fn same_setting(&self, r: &ResultRow) -> bool {
        self.method == r.method
            && self.eta1 == r.eta1
            && self.eta2 == r.eta2
            && self.gamma == r.gamma
            && self.lambda == r.lambda
    }
}

/// Groups rows by `(method, eta1, eta2, gamma, lambda)` in order of first
/// appearance and averages the metrics. Rows with NaN metrics are skipped.
pub fn seed_means(rows: &[ResultRow]) -> Vec<MeanPoint> {
    let mut out: Vec<MeanPoint> = Vec::new();
    for r in rows.iter().filter(|r| r.accuracy.is_finite()) {
        match out.iter_mut().find(|m| m.same_setting(r)) {
            Some(m) => {
                m.accuracy += r.accuracy;
                m.delta_dp += r.delta_dp;
                m.delta_eo += r.delta_eo;
                m.seeds += 1;
            }
            None => out.push(MeanPoint {
                method: r.method.clone(),
                eta1: r.eta1,
                eta2: r.eta2,
                gamma: r.gamma,
                lambda: r.lambda,
                accuracy: r.accuracy,
                delta_dp: r.delta_dp,
                delta_eo: r.delta_eo,
                seeds: 1,
            }),
        }
    }
    for m in &mut out {
        let n = m.seeds as f64;
        m.accuracy /= n;
        m.delta_dp /= n;
        m.delta_eo /= n;
    }
    out
}

fn methods(points: &[MeanPoint]) -> Vec<String> {
    let mut names: Vec<String> = Vec::new();
    for p in points {
        if !names.contains(&p.method) {
            names.push(p.method.clone());
        }
    }
    names
}

/// Front of one method under `metric` ("dp" or "eo"). Among points sharing a
/// front position the first in input order is reported.
pub fn method_front(points: &[MeanPoint], method: &str, metric: &str) -> Vec<FrontRow> {
    let mine: Vec<&MeanPoint> = points.iter().filter(|p| p.method == method).collect();
    let delta = |p: &MeanPoint| {
        if metric == "dp" {
            p.delta_dp
        } else {
            p.delta_eo
        }
    };
    let tradeoff: Vec<TradeoffPoint> = mine
        .iter()
        .map(|p| TradeoffPoint::new(p.accuracy, delta(p)))
        .collect();
    pareto_front(&tradeoff)
        .into_iter()
        .map(|t| {
            let p = mine
                .iter()
                .find(|p| p.accuracy == t.accuracy && delta(p) == t.delta)
                .expect("front points come from the input");
            FrontRow {
                metric: metric.to_string(),
                method: p.method.clone(),
                eta1: p.eta1,
                eta2: p.eta2,
                gamma: p.gamma,
                lambda: p.lambda,
                accuracy: p.accuracy,
                delta: t.delta,
            }
        })
        .collect()
}

/// Fronts of every method for one metric, methods in order of appearance.
pub fn fronts(points: &[MeanPoint], metric: &str) -> Vec<FrontRow> {
    methods(points)
        .iter()
        .flat_map(|m| method_front(points, m, metric))
        .collect()
}

/// `*_results.csv` files directly inside `dir`, sorted by name.
pub fn results_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with("_results.csv"))
        {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Writes `<prefix>_dp.csv` and `<prefix>_eo.csv` into `out` for every
/// results file in `dir` and returns the summary text.
pub fn report(dir: &Path, out: &Path) -> Result<String> {
    let files = results_files(dir)?;
    if files.is_empty() {
        return Err(Error::Config(format!("no results in {}", dir.display())));
    }
    let mut text = String::new();
    for file in files {
        let name = file
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        let prefix = name.trim_end_matches("_results.csv");
        let rows = read_results(&file)?;
        let points = seed_means(&rows);
        let failed = rows.iter().filter(|r| !r.accuracy.is_finite()).count();
        write_fronts(
            &out.join(format!("{}_dp.csv", prefix)),
            &fronts(&points, "dp"),
        )?;
        write_fronts(
            &out.join(format!("{}_eo.csv", prefix)),
            &fronts(&points, "eo"),
        )?;
        let _ = writeln!(
            text,
            "{}: {} rows ({} failed), {} settings",
            prefix,
            rows.len(),
            failed,
            points.len()
        );
        for m in methods(&points) {
            let mine: Vec<&MeanPoint> = points.iter().filter(|p| p.method == m).collect();
            let best = mine
                .iter()
                .map(|p| p.accuracy)
                .fold(f64::NEG_INFINITY, f64::max);
            let dp = mine
                .iter()
                .map(|p| p.delta_dp)
                .fold(f64::INFINITY, f64::min);
            let eo = mine
                .iter()
                .map(|p| p.delta_eo)
                .fold(f64::INFINITY, f64::min);
            let _ = writeln!(
                text,
                "  {:<12} settings {:>3}  best accuracy {:.4}  min delta_dp {:.4}  min delta_eo {:.4}  dp front {}",
                m,
                mine.len(),
                best,
                dp,
                eo,
                method_front(&points, &m, "dp").len()
            );
        }
    }
    Ok(text)
}
