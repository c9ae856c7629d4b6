//! Training a downstream classifier on latent codes that are nudged along
//! the sensitive focus (away from the sensitive classifier's prediction) and
//! against the task focus (towards the task model's prediction).

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::explain::focus;
use crate::nn::{fit_classifier, BatchTransform, Identity, Mlp, TrainConfig};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PerturbationConfig {
    pub eta1: f64,
    pub eta2: f64,
    /// Per-dimension bound `ε_i = eps_ratio · |z_i|`.
    pub eps_ratio: f64,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        PerturbationConfig {
            eta1: 0.0,
            eta2: 0.0,
            eps_ratio: 0.1,
        }
    }
}

impl PerturbationConfig {
    pub fn new(eta1: f64, eta2: f64) -> Self {
        PerturbationConfig {
            eta1,
            eta2,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.eta1) && ok(self.eta2) && ok(self.eps_ratio)) {
            return Err(Error::invalid(format!(
                "eta1, eta2 and eps_ratio must be finite and >= 0, got {}, {}, {}",
                self.eta1, self.eta2, self.eps_ratio
            )));
        }
        Ok(())
    }

    pub fn is_identity(&self) -> bool {
        self.eta1 == 0.0 && self.eta2 == 0.0
    }
}

/// Clamps every `v_i` into `[-eps_i, eps_i]`.
pub fn clip_eps(v: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    if v.len() != eps.len() {
        return Err(Error::invalid(format!(
            "{} values for {} thresholds",
            v.len(),
            eps.len()
        )));
    }
    if let Some(e) = eps.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::invalid(format!(
            "clip threshold must be >= 0, got {}",
            e
        )));
    }
    Ok(v.iter().zip(eps).map(|(&x, &e)| x.clamp(-e, e)).collect())
}

/// `z + clip(η1·f_sens − η2·f_task, eps_ratio·|z|)`.
///
/// Entries whose clipped step is zero are copied unchanged, so an identity
/// configuration returns `z` bit for bit.
pub fn perturb(
    z: &Tensor,
    f_sens: &Tensor,
    f_task: &Tensor,
    cfg: &PerturbationConfig,
) -> Result<Tensor> {
    cfg.validate()?;
    if z.shape() != f_sens.shape() || z.shape() != f_task.shape() {
        return Err(Error::shape(
            "perturb",
            None,
            format!(
                "code {:?}, f_sens {:?}, f_task {:?}",
                z.shape(),
                f_sens.shape(),
                f_task.shape()
            ),
        ));
    }
    if !(z.is_finite() && f_sens.is_finite() && f_task.is_finite()) {
        return Err(Error::NonFinite("perturbation input"));
    }
    let mut out = z.clone();
    for ((o, &s), &t) in out
        .data_mut()
        .iter_mut()
        .zip(f_sens.data())
        .zip(f_task.data())
    {
        let eps = cfg.eps_ratio * o.abs();
        let step = (cfg.eta1 * s - cfg.eta2 * t).clamp(-eps, eps);
        if step != 0.0 {
            let z = *o;
            let mut v = z + step;
            // rounding of the sum can overshoot eps by an ulp
            while (v - z).abs() > eps {
                v = if v > z { v.next_down() } else { v.next_up() };
            }
            *o = v;
        }
    }
    Ok(out)
}

/// Batch hook that perturbs codes using a frozen sensitive classifier and
/// the task model's current parameters.
pub struct DvgeTransform<'a> {
    pub sensitive: &'a Mlp,
    pub config: PerturbationConfig,
}

impl BatchTransform for DvgeTransform<'_> {
    fn transform(&mut self, model: &Mlp, inputs: Tensor, _batch_index: &[usize]) -> Result<Tensor> {
        if self.config.is_identity() {
            return Ok(inputs);
        }
        let f_sens = focus(self.sensitive, &inputs)?;
        let f_task = focus(model, &inputs)?;
        perturb(&inputs, &f_sens, &f_task, &self.config)
    }
}

/// Trains `task` on perturbed copies of `codes`. `sensitive` is only read.
pub fn train_dvge(
    task: &mut Mlp,
    sensitive: &Mlp,
    codes: &Tensor,
    labels: &[usize],
    perturbation: &PerturbationConfig,
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    perturbation.validate()?;
    if sensitive.input_width() != codes.cols() || sensitive.output_width() != 2 {
        return Err(Error::invalid(format!(
            "sensitive classifier maps {} -> {}, codes have width {}",
            sensitive.input_width(),
            sensitive.output_width(),
            codes.cols()
        )));
    }
    let mut hook = DvgeTransform {
        sensitive,
        config: *perturbation,
    };
    fit_classifier(task, codes, labels, config, rng, &mut hook, |_, _, _| {})
}

/// Plain training on unperturbed codes.
pub fn train_plain(
    task: &mut Mlp,
    codes: &Tensor,
    labels: &[usize],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    fit_classifier(
        task,
        codes,
        labels,
        config,
        rng,
        &mut Identity,
        |_, _, _| {},
    )
}

/// Inference path: argmax of the task model on unperturbed codes.
pub fn infer(task: &Mlp, codes: &Tensor) -> Result<Vec<usize>> {
    task.predict(codes)
}
