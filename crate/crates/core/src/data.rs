//! Tabular datasets: named columns, normalisation onto `[0, 1]`, binary
//! sensitive attributes and seeded splits.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::{permutation, rng_from_seed};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ColumnKind {
    Continuous,
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    pub values: Vec<f64>,
}

impl Column {
    pub fn new(name: impl Into<String>, kind: ColumnKind, values: Vec<f64>) -> Self {
        Column {
            name: name.into(),
            kind,
            values,
        }
    }
}

/// Equal-length named columns.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Table {
    columns: Vec<Column>,
}

impl Table {
    pub fn new(columns: Vec<Column>) -> Result<Self> {
        let n = columns.first().map_or(0, |c| c.values.len());
        let mut seen = BTreeSet::new();
        for c in &columns {
            if c.values.len() != n {
                return Err(Error::invalid(format!(
                    "column '{}' has {} rows, expected {}",
                    c.name,
                    c.values.len(),
                    n
                )));
            }
            if !seen.insert(c.name.as_str()) {
                return Err(Error::invalid(format!("duplicate column '{}'", c.name)));
            }
            if let Some(v) = c.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("column '{}' holds {}", c.name, v)));
            }
        }
        Ok(Table { columns })
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.values.len())
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.columns
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| Error::invalid(format!("no column named '{}'", name)))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Table {
        Table {
            columns: self
                .columns
                .iter()
                .map(|c| {
                    Column::new(
                        c.name.clone(),
                        c.kind,
                        idx.iter().map(|&i| c.values[i]).collect(),
                    )
                })
                .collect(),
        }
    }

    /// `[n_rows, k]` matrix of every column not listed in `exclude`, in table order.
    pub fn features(&self, exclude: &[&str]) -> Result<Tensor> {
        for name in exclude {
            self.column(name)?;
        }
        let kept: Vec<&Column> = self
            .columns
            .iter()
            .filter(|c| !exclude.contains(&c.name.as_str()))
            .collect();
        let n = self.n_rows();
        let mut data = Vec::with_capacity(n * kept.len());
        for i in 0..n {
            data.extend(kept.iter().map(|c| c.values[i]));
        }
        Tensor::matrix(n, kept.len(), data)
    }
}

/// Continuous columns are divided by their maximum; categorical columns are
/// mapped onto `{0, 1/(c−1), …, 1}` by the rank of their distinct values
/// (a single category maps to 0).
pub fn normalize(table: &Table) -> Result<Table> {
    let mut columns = Vec::with_capacity(table.columns.len());
    for c in &table.columns {
        let values = match c.kind {
            ColumnKind::Continuous => {
                let max = c.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let min = c.values.iter().copied().fold(f64::INFINITY, f64::min);
                if !(max > 0.0) || min < 0.0 {
                    return Err(Error::invalid(format!(
                        "continuous column '{}' must be non-negative with a positive maximum (min {}, max {})",
                        c.name, min, max
                    )));
                }
                c.values.iter().map(|v| v / max).collect()
            }
            ColumnKind::Categorical => {
                let mut levels: Vec<f64> = c.values.clone();
                levels.sort_by(f64::total_cmp);
                levels.dedup();
                let top = levels.len().saturating_sub(1).max(1) as f64;
                c.values
                    .iter()
                    .map(|v| {
                        let rank = levels.partition_point(|l| l < v);
                        rank as f64 / top
                    })
                    .collect()
            }
        };
        columns.push(Column::new(c.name.clone(), c.kind, values));
    }
    Ok(Table { columns })
}

/// How a raw column becomes a binary attribute.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "rule", rename_all = "snake_case"))]
pub enum BinaryRule {
    /// `value >= at`.
    Threshold { at: f64 },
    /// Value is one of `values`; each listed value must occur in the column.
    OneOf { values: Vec<f64> },
    /// Column already holds 0/1.
    Identity,
}

pub fn binarize(table: &Table, column: &str, rule: &BinaryRule) -> Result<Vec<bool>> {
    let col = table.column(column)?;
    match rule {
        BinaryRule::Threshold { at } => Ok(col.values.iter().map(|v| v >= at).collect()),
        BinaryRule::OneOf { values } => {
            if let Some(v) = values.iter().find(|v| !col.values.contains(v)) {
                return Err(Error::invalid(format!(
                    "value {} never occurs in column '{}'",
                    v, column
                )));
            }
            Ok(col.values.iter().map(|v| values.contains(v)).collect())
        }
        BinaryRule::Identity => col
            .values
            .iter()
            .map(|&v| match v {
                0.0 => Ok(false),
                1.0 => Ok(true),
                v => Err(Error::invalid(format!(
                    "column '{}' is not binary: holds {}",
                    column, v
                ))),
            })
            .collect(),
    }
}

/// Row-wise AND of equal-length attributes.
pub fn conjunction(attributes: &[Vec<bool>]) -> Result<Vec<bool>> {
    let first = attributes
        .first()
        .ok_or_else(|| Error::invalid("conjunction of no attributes"))?;
    if attributes.iter().any(|a| a.len() != first.len()) {
        return Err(Error::invalid(
            "conjunction of attributes with different lengths",
        ));
    }
    Ok((0..first.len())
        .map(|i| attributes.iter().all(|a| a[i]))
        .collect())
}

/// Seeded partition of `0..n` into `(train, test)` with
/// `round(n · train_fraction)` training rows.
pub fn split(n: usize, train_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::invalid(format!(
            "train fraction {} not in (0, 1)",
            train_fraction
        )));
    }
    let order = permutation(&mut rng_from_seed(seed), n);
    let cut = libm::round(n as f64 * train_fraction) as usize;
    Ok((order[..cut].to_vec(), order[cut..].to_vec()))
}

pub fn bools_to_labels(v: &[bool]) -> Vec<usize> {
    v.iter().map(|&b| usize::from(b)).collect()
}
