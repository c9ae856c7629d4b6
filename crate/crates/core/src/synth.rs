//! Synthetic tabular data with a binary sensitive attribute, a proxy of it,
//! task signals and label bias.
//!
//! Per row: `s ~ Bernoulli(prevalence)`; the proxy equals `s` with
//! probability `(1 + proxy_corr) / 2` and `1 − s` otherwise; task signals
//! `t_j ~ U(0, 1)`; `P(y = 1) = min(1, σ(signal_scale · (mean(t) − 0.5)) + label_bias · s)`;
//! each label is then flipped with probability `label_noise`. Distractor
//! columns are `U(0, 1)`.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::sigmoid;
use crate::data::{Column, ColumnKind, Table};
use crate::error::{Error, Result};
use crate::rng::stage_rng;

pub const SENSITIVE: &str = "sensitive";
pub const PROXY: &str = "proxy";
pub const LABEL: &str = "label";

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SyntheticSpec {
    pub n: usize,
    pub task_features: usize,
    pub prevalence: f64,
    pub proxy_corr: f64,
    pub label_bias: f64,
    pub signal_scale: f64,
    pub label_noise: f64,
    pub noise_features: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 10_000,
            task_features: 4,
            prevalence: 0.5,
            proxy_corr: 0.8,
            label_bias: 0.3,
            signal_scale: 12.0,
            label_noise: 0.0,
            noise_features: 2,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n == 0 || self.task_features == 0 {
            return Err(Error::invalid(
                "synthetic data needs n > 0 and at least one task feature",
            ));
        }
        if !(unit(self.prevalence)
            && unit(self.proxy_corr)
            && unit(self.label_bias)
            && unit(self.label_noise))
        {
            return Err(Error::invalid(format!(
                "prevalence, proxy_corr, label_bias and label_noise must lie in [0, 1]: {:?}",
                self
            )));
        }
        if !self.signal_scale.is_finite() {
            return Err(Error::invalid("signal_scale must be finite"));
        }
        Ok(())
    }

    /// Probability of `y = 1` before label noise.
    pub fn positive_rate(&self, task: &[f64], s: bool) -> f64 {
        let mean = task.iter().sum::<f64>() / task.len() as f64;
        let base = sigmoid(self.signal_scale * (mean - 0.5));
        (base + if s { self.label_bias } else { 0.0 }).min(1.0)
    }
}

/// Columns `task_0.. , sensitive, proxy, noise_0.., label`.
pub fn generate(spec: &SyntheticSpec) -> Result<Table> {
    spec.validate()?;
    let mut rng = stage_rng(spec.seed, "synthetic");
    let k = spec.task_features;
    let mut task = vec_of(k, spec.n);
    let mut noise = vec_of(spec.noise_features, spec.n);
    let mut s = Vec::with_capacity(spec.n);
    let mut p = Vec::with_capacity(spec.n);
    let mut y = Vec::with_capacity(spec.n);
    let keep = (1.0 + spec.proxy_corr) / 2.0;
    let mut t = Vec::with_capacity(k);
    for _ in 0..spec.n {
        let si = rng.random::<f64>() < spec.prevalence;
        let pi = if rng.random::<f64>() < keep { si } else { !si };
        t.clear();
        t.extend((0..k).map(|_| rng.random::<f64>()));
        let mut yi = rng.random::<f64>() < spec.positive_rate(&t, si);
        if rng.random::<f64>() < spec.label_noise {
            yi = !yi;
        }
        for (col, &v) in task.iter_mut().zip(&t) {
            col.push(v);
        }
        for col in noise.iter_mut() {
            col.push(rng.random::<f64>());
        }
        s.push(f64::from(u8::from(si)));
        p.push(f64::from(u8::from(pi)));
        y.push(f64::from(u8::from(yi)));
    }
    let mut columns = Vec::with_capacity(k + spec.noise_features + 3);
    for (j, v) in task.into_iter().enumerate() {
        columns.push(Column::new(
            format!("task_{}", j),
            ColumnKind::Continuous,
            v,
        ));
    }
    columns.push(Column::new(SENSITIVE, ColumnKind::Categorical, s));
    columns.push(Column::new(PROXY, ColumnKind::Categorical, p));
    for (j, v) in noise.into_iter().enumerate() {
        columns.push(Column::new(
            format!("noise_{}", j),
            ColumnKind::Continuous,
            v,
        ));
    }
    columns.push(Column::new(LABEL, ColumnKind::Categorical, y));
    Table::new(columns)
}

fn vec_of(k: usize, n: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| Vec::with_capacity(n)).collect()
}
