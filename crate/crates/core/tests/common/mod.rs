//! Straight-line reference implementations shared by the integration tests.

#![allow(dead_code)]

use dvge_core::nn::{Activation, Mlp};
use dvge_core::Tensor;

/// Pre-activation signs of every hidden unit, used to spot kinks.
pub type Pattern = Vec<bool>;

/// Row-by-row forward pass written out with plain loops.
pub fn forward_row(mlp: &Mlp, x: &[f64]) -> (Vec<f64>, Pattern) {
    let params = mlp.params();
    let layers = params.len() / 2;
    let act = mlp.spec().activation;
    let mut h = x.to_vec();
    let mut pattern = Vec::new();
    for l in 0..layers {
        let (w, b) = (&params[2 * l], &params[2 * l + 1]);
        let (fan_in, fan_out) = (w.shape()[0], w.shape()[1]);
        let mut out = b.data().to_vec();
        for i in 0..fan_in {
            for j in 0..fan_out {
                out[j] += h[i] * w.data()[i * fan_out + j];
            }
        }
        if l + 1 < layers {
            for v in out.iter_mut() {
                pattern.push(*v > 0.0);
                *v = match act {
                    Activation::Relu => v.max(0.0),
                    Activation::LeakyRelu(s) => {
                        if *v > 0.0 {
                            *v
                        } else {
                            s * *v
                        }
                    }
                    Activation::None => *v,
                };
            }
        }
        h = out;
    }
    (h, pattern)
}

pub fn forward(mlp: &Mlp, x: &Tensor) -> (Vec<Vec<f64>>, Pattern) {
    let mut rows = Vec::new();
    let mut pattern = Vec::new();
    for i in 0..x.rows() {
        let (r, p) = forward_row(mlp, x.row(i));
        rows.push(r);
        pattern.extend(p);
    }
    (rows, pattern)
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn cross_entropy_sum(logits: &[Vec<f64>], targets: &[usize]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(r, &t)| log_sum_exp(r) - r[t])
        .sum()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let l = log_sum_exp(v);
    v.iter().map(|x| (x - l).exp()).collect()
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Central difference of `f` at `x`, one coordinate at a time.
pub fn central_difference(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = x.to_vec();
    (0..x.len())
        .map(|i| {
            p[i] = x[i] + h;
            let up = f(&p);
            p[i] = x[i] - h;
            let down = f(&p);
            p[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}
