//! Group-fairness metrics and Pareto fronts.
//!
//! Everything is computed from a 2×2×2 table of counts indexed by
//! `[group][label][prediction]`, so a stored [`FairnessReport`] can always be
//! re-derived from its counts.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Predictions, labels and binary group membership for one evaluation set.
/// `group[i] == true` is group s1. A conjunction of sensitive attributes is
/// collapsed into this single flag before evaluation.
#[derive(Debug, Clone, Copy)]
pub struct EvalBatch<'a> {
    pub predictions: &'a [bool],
    pub labels: &'a [bool],
    pub groups: &'a [bool],
}

/// Counts indexed `[group][label][prediction]` with `false = 0`, `true = 1`.
pub type CountTable = [[[u64; 2]; 2]; 2];

impl<'a> EvalBatch<'a> {
    pub fn new(predictions: &'a [bool], labels: &'a [bool], groups: &'a [bool]) -> Result<Self> {
        if predictions.len() != labels.len() || labels.len() != groups.len() {
            return Err(Error::invalid(alloc::format!(
                "lengths differ: {} predictions, {} labels, {} groups",
                predictions.len(),
                labels.len(),
                groups.len()
            )));
        }
        Ok(EvalBatch {
            predictions,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn counts(&self) -> CountTable {
        let mut c = [[[0u64; 2]; 2]; 2];
        for ((&p, &y), &s) in self.predictions.iter().zip(self.labels).zip(self.groups) {
            c[usize::from(s)][usize::from(y)][usize::from(p)] += 1;
        }
        c
    }
}

fn rate(num: u64, den: u64) -> f64 {
    num as f64 / den as f64
}

/// `|P(ŷ=1 | s=s1) − P(ŷ=1 | s=s2)|` from a count table.
pub fn delta_dp_from_counts(c: &CountTable) -> Result<f64> {
    let group_n = |s: usize| c[s].iter().flatten().sum::<u64>();
    let group_pos = |s: usize| c[s][0][1] + c[s][1][1];
    let (n0, n1) = (group_n(0), group_n(1));
    if n0 == 0 || n1 == 0 {
        return Err(Error::UndefinedMetric(
            "delta_dp needs both groups non-empty",
        ));
    }
    Ok((rate(group_pos(1), n1) - rate(group_pos(0), n0)).abs())
}

/// True-positive-rate gap between groups.
pub fn delta_eo_from_counts(c: &CountTable) -> Result<f64> {
    let (p0, p1) = positives(c)?;
    Ok((rate(c[1][1][1], p1) - rate(c[0][1][1], p0)).abs())
}

/// False-negative-rate gap between groups; equal to [`delta_eo_from_counts`].
pub fn delta_eo_fnr_from_counts(c: &CountTable) -> Result<f64> {
    let (p0, p1) = positives(c)?;
    Ok((rate(c[1][1][0], p1) - rate(c[0][1][0], p0)).abs())
}

fn positives(c: &CountTable) -> Result<(u64, u64)> {
    let p0 = c[0][1][0] + c[0][1][1];
    let p1 = c[1][1][0] + c[1][1][1];
    if p0 == 0 || p1 == 0 {
        return Err(Error::UndefinedMetric(
            "delta_eo needs positive labels in both groups",
        ));
    }
    Ok((p0, p1))
}

pub fn accuracy_from_counts(c: &CountTable) -> Result<f64> {
    let total: u64 = c.iter().flatten().flatten().sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("accuracy of an empty batch"));
    }
    let correct: u64 = (0..2).map(|s| c[s][0][0] + c[s][1][1]).sum();
    Ok(rate(correct, total))
}

pub fn delta_dp(batch: &EvalBatch) -> Result<f64> {
    delta_dp_from_counts(&batch.counts())
}

pub fn delta_eo(batch: &EvalBatch) -> Result<f64> {
    delta_eo_from_counts(&batch.counts())
}

pub fn delta_eo_fnr(batch: &EvalBatch) -> Result<f64> {
    delta_eo_fnr_from_counts(&batch.counts())
}

pub fn accuracy(batch: &EvalBatch) -> Result<f64> {
    accuracy_from_counts(&batch.counts())
}

/// Accuracy, ΔDP and ΔEO of one trained model together with the count table
/// they were computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FairnessReport {
    pub accuracy: f64,
    pub delta_dp: f64,
    pub delta_eo: f64,
    pub counts: CountTable,
}

impl FairnessReport {
    pub fn from_counts(counts: CountTable) -> Result<Self> {
        Ok(FairnessReport {
            accuracy: accuracy_from_counts(&counts)?,
            delta_dp: delta_dp_from_counts(&counts)?,
            delta_eo: delta_eo_from_counts(&counts)?,
            counts,
        })
    }

    pub fn evaluate(batch: &EvalBatch) -> Result<Self> {
        FairnessReport::from_counts(batch.counts())
    }
}

/// One (accuracy, fairness gap) point of a trade-off plot.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TradeoffPoint {
    pub accuracy: f64,
    pub delta: f64,
}

impl TradeoffPoint {
    pub fn new(accuracy: f64, delta: f64) -> Self {
        TradeoffPoint { accuracy, delta }
    }

    /// `self` is at least as good in both objectives and strictly better in one.
    pub fn dominates(&self, other: &TradeoffPoint) -> bool {
        self.accuracy >= other.accuracy
            && self.delta <= other.delta
            && (self.accuracy > other.accuracy || self.delta < other.delta)
    }
}

/// Non-dominated subset (maximise accuracy, minimise delta), duplicates
/// removed, sorted by ascending delta. Along the result accuracy is strictly
/// increasing.
pub fn pareto_front(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let mut sorted: Vec<TradeoffPoint> = points.to_vec();
    // Ascending delta, then descending accuracy: a point survives iff it beats
    // the best accuracy seen so far.
    sorted.sort_by(|a, b| {
        a.delta
            .total_cmp(&b.delta)
            .then_with(|| b.accuracy.total_cmp(&a.accuracy))
    });
    let mut front: Vec<TradeoffPoint> = Vec::new();
    for p in sorted {
        match front.last() {
            Some(last) if p.accuracy <= last.accuracy => {}
            _ => front.push(p),
        }
    }
    front
}

/// Best accuracy reachable on `front` with delta at most `threshold`.
pub fn best_accuracy_within(front: &[TradeoffPoint], threshold: f64) -> Option<f64> {
    front
        .iter()
        .filter(|p| p.delta <= threshold)
        .map(|p| p.accuracy)
        .fold(None, |acc, a| Some(acc.map_or(a, |b: f64| b.max(a))))
}
