//! CSV and JSON files: normalised tables, result rows, fronts, ablation
//! tables and explanation dumps. All text output is UTF-8 with `\n` endings.

use std::fs;
use std::path::Path;

use dvge_core::baselines::AblationRow;
use dvge_core::data::Table;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const RESULTS_HEADER: &str =
    "run_id,config_hash,method,eta1,eta2,gamma,lambda,seed,accuracy,delta_dp,delta_eo,seconds";

/// One trained model evaluated on the held-out split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run_id: String,
    pub config_hash: String,
    pub method: String,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub seed: u64,
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
    pub seconds: f64,
}

/// One point of a per-method Pareto front over seed-mean results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontRow {
    pub metric: String,
    pub method: String,
    pub eta1: f64,
    pub eta2: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub accuracy: f64,
    pub delta: f64,
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<()> {
    let mut w = writer(path)?;
    if rows.is_empty() {
        w.write_record(header).map_err(|e| Error::csv(path, e))?;
    }
    for r in rows {
        w.serialize(r).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_rows<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::csv(path, e)))
        .collect()
}

pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<()> {
    write_rows(path, rows, &RESULTS_HEADER.split(',').collect::<Vec<_>>())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.lines().next() != Some(RESULTS_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            column: 1,
            detail: "not a results file (unexpected header)".into(),
        });
    }
    read_rows(path)
}

pub fn write_fronts(path: &Path, rows: &[FrontRow]) -> Result<()> {
    write_rows(
        path,
        rows,
        &[
            "metric", "method", "eta1", "eta2", "gamma", "lambda", "accuracy", "delta",
        ],
    )
}

/// Header line then one row per record, comma separated.
pub fn write_table(path: &Path, table: &Table) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(table.names())
        .map_err(|e| Error::csv(path, e))?;
    for i in 0..table.n_rows() {
        w.write_record(table.columns().iter().map(|c| c.values[i].to_string()))
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ablation table: one row per encoder, reference columns then one column
/// per η1.
pub fn write_ablation(path: &Path, rows: &[(String, AblationRow)]) -> Result<()> {
    let mut w = writer(path)?;
    let etas = rows
        .first()
        .map(|(_, r)| r.eta1.clone())
        .unwrap_or_default();
    let mut header = vec!["encoder".to_string(), "no_removal".into(), "removed".into()];
    header.extend(etas.iter().map(|e| format!("eta1_{}", e)));
    w.write_record(&header).map_err(|e| Error::csv(path, e))?;
    for (name, r) in rows {
        let mut rec = vec![
            name.clone(),
            r.no_removal.to_string(),
            r.removed.to_string(),
        ];
        rec.extend(r.accuracy.iter().map(|a| a.to_string()));
        w.write_record(&rec).map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `sample,dim,value` rows.
pub fn write_explanations(path: &Path, entries: &[(usize, usize, f64)]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["sample", "dim", "value"])
        .map_err(|e| Error::csv(path, e))?;
    for (s, d, v) in entries {
        w.write_record([s.to_string(), d.to_string(), v.to_string()])
            .map_err(|e| Error::csv(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}
