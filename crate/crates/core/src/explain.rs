//! Gradient-based explanations on latent codes.
//!
//! A focus is the gradient of the cross-entropy of a model's own argmax
//! prediction with respect to its input code. The per-sample losses are
//! summed, so row `i` of the gradient only depends on sample `i`.

use alloc::vec::Vec;

use crate::autodiff::Graph;
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, cross_entropy_sum, Mlp};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum FocusKind {
    Sensitive,
    Task,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Psi {
    Identity,
    #[default]
    Abs,
    AbsNormalized,
}

/// `∂/∂z Σ_i CE(model(z_i), argmax model(z_i))`, one row per sample.
/// The model is only read.
pub fn focus(model: &Mlp, z: &Tensor) -> Result<Tensor> {
    let logits = model.logits(z)?;
    focus_for_targets(model, z, &argmax_rows(&logits))
}

/// Like [`focus`] but against caller-supplied targets.
pub fn focus_for_targets(model: &Mlp, z: &Tensor, targets: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let vars = model.bind(&mut g, false);
    let zv = g.leaf(z.clone(), true);
    let logits = model.forward(&mut g, &vars, zv)?;
    let loss = cross_entropy_sum(&mut g, logits, targets)?;
    let grad = g
        .backward(loss, &[zv])?
        .pop()
        .expect("one gradient per input");
    if !grad.is_finite() {
        return Err(Error::NonFinite("focus"));
    }
    Ok(grad)
}

/// `ψ(focus ⊙ z)` per sample.
pub fn explanation_map(focus: &Tensor, z: &Tensor, psi: Psi) -> Result<Tensor> {
    if focus.shape() != z.shape() {
        return Err(Error::shape(
            "explanation_map",
            None,
            alloc::format!("focus {:?} vs code {:?}", focus.shape(), z.shape()),
        ));
    }
    let mut out = Tensor::new(
        z.shape().to_vec(),
        focus
            .data()
            .iter()
            .zip(z.data())
            .map(|(f, v)| f * v)
            .collect(),
    )?;
    if psi == Psi::Identity {
        return Ok(out);
    }
    for v in out.data_mut() {
        *v = v.abs();
    }
    if psi == Psi::AbsNormalized && !out.is_empty() {
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                row.iter_mut().for_each(|v| *v /= max);
            }
        }
    }
    Ok(out)
}

/// `(sample, dim, value)` triples in row-major order.
pub fn map_entries(map: &Tensor) -> Vec<(usize, usize, f64)> {
    let c = map.cols();
    map.data()
        .iter()
        .enumerate()
        .map(|(k, &v)| (k / c, k % c, v))
        .collect()
}
