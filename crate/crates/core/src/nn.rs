//! Feed-forward networks, the classification loss, Adam, and a minibatch
//! classifier trainer shared by every model in the pipeline.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::{permutation, Rng};
use crate::tensor::{Fnv, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    None,
}

impl Activation {
    /// `LeakyReLU(0.2)`, the activation of every MLP body in the reference
    /// architectures.
    pub const LEAKY: Activation = Activation::LeakyRelu(0.2);

    fn apply(self, g: &mut Graph, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::LeakyRelu(s) => g.leaky_relu(x, s),
            Activation::None => x,
        }
    }
}

/// Layer layout of an [`Mlp`]: `input_width -> hidden... -> output_width`,
/// with `activation` after every hidden layer and none after the output.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpSpec {
    pub input_width: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    pub output_width: usize,
}

impl MlpSpec {
    pub fn new(
        input_width: usize,
        hidden_widths: Vec<usize>,
        activation: Activation,
        output_width: usize,
    ) -> Self {
        MlpSpec {
            input_width,
            hidden_widths,
            activation,
            output_width,
        }
    }

    /// Single affine layer.
    pub fn linear(input_width: usize, output_width: usize) -> Self {
        MlpSpec::new(input_width, Vec::new(), Activation::None, output_width)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_width == 0 || self.output_width == 0 || self.hidden_widths.contains(&0) {
            return Err(Error::invalid(format!(
                "MLP widths must be positive: {:?}",
                self
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = Vec::with_capacity(self.hidden_widths.len() + 2);
        widths.push(self.input_width);
        widths.extend_from_slice(&self.hidden_widths);
        widths.push(self.output_width);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn num_layers(&self) -> usize {
        self.hidden_widths.len() + 1
    }
}

/// Multi-layer perceptron. Parameters are stored as
/// `[w0, b0, w1, b1, ...]` with `w: [fan_in, fan_out]`, `b: [fan_out]`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "RawMlp"))]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

#[cfg(feature = "serde")]
#[derive(serde::Deserialize)]
struct RawMlp {
    spec: MlpSpec,
    params: Vec<Tensor>,
}

#[cfg(feature = "serde")]
impl TryFrom<RawMlp> for Mlp {
    type Error = Error;

    fn try_from(raw: RawMlp) -> Result<Self> {
        Mlp::from_params(raw.spec, raw.params)
    }
}

/// Graph handles for an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpVars {
    pub params: Vec<Var>,
}

impl Mlp {
    /// Uniform initialisation in `[-1/√fan_in, 1/√fan_in]` for weights and biases.
    pub fn new(spec: MlpSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::with_capacity(2 * spec.num_layers());
        for (fan_in, fan_out) in spec.layer_dims() {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            let b: Vec<f64> = (0..fan_out)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            params.push(Tensor::matrix(fan_in, fan_out, w)?);
            params.push(Tensor::vector(b));
        }
        Ok(Mlp { spec, params })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let params = spec
            .layer_dims()
            .into_iter()
            .flat_map(|(i, o)| [Tensor::zeros(&[i, o]), Tensor::zeros(&[o])])
            .collect();
        Ok(Mlp { spec, params })
    }

    pub fn from_params(spec: MlpSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        if params.len() != 2 * dims.len() {
            return Err(Error::invalid(format!(
                "expected {} parameter tensors, got {}",
                2 * dims.len(),
                params.len()
            )));
        }
        for (l, (i, o)) in dims.iter().enumerate() {
            if params[2 * l].shape() != [*i, *o] || params[2 * l + 1].shape() != [*o] {
                return Err(Error::shape(
                    "mlp",
                    None,
                    format!(
                        "layer {} expects weight [{}, {}] and bias [{}], got {:?} and {:?}",
                        l,
                        i,
                        o,
                        o,
                        params[2 * l].shape(),
                        params[2 * l + 1].shape()
                    ),
                ));
            }
        }
        Ok(Mlp { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn input_width(&self) -> usize {
        self.spec.input_width
    }

    pub fn output_width(&self) -> usize {
        self.spec.output_width
    }

    /// Hash of every parameter bit pattern; equal iff parameters are bit-identical
    /// (up to hash collisions).
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::default();
        for p in &self.params {
            h.write(p.fingerprint());
        }
        h.0
    }

    /// Adds the parameters to `g` as leaves.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> MlpVars {
        MlpVars {
            params: self
                .params
                .iter()
                .map(|p| g.leaf(p.clone(), trainable))
                .collect(),
        }
    }

    /// Logits for a `[batch, input_width]` input already on the graph.
    pub fn forward(&self, g: &mut Graph, vars: &MlpVars, x: Var) -> Result<Var> {
        let shape = g.shape(x);
        if shape.len() != 2 || shape[1] != self.spec.input_width {
            return Err(Error::shape(
                "mlp_forward",
                Some(x.index()),
                format!(
                    "input {:?} does not match width {}",
                    shape, self.spec.input_width
                ),
            ));
        }
        let last = self.spec.num_layers() - 1;
        let mut h = x;
        for l in 0..=last {
            h = g.matmul(h, vars.params[2 * l])?;
            h = g.add(h, vars.params[2 * l + 1])?;
            if l < last {
                h = self.spec.activation.apply(g, h);
            }
        }
        Ok(h)
    }

    /// Logits without tracking parameter gradients.
    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let vars = self.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &vars, xv)?;
        Ok(g.value(out).clone())
    }

    /// Argmax class per row; ties go to the lower index.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.logits(x)?))
    }
}

pub fn argmax_rows(logits: &Tensor) -> Vec<usize> {
    let c = logits.cols();
    logits
        .data()
        .chunks(c)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

fn check_targets(g: &Graph, logits: Var, targets: &[usize]) -> Result<()> {
    let s = g.shape(logits);
    if s.len() != 2 || s[0] != targets.len() {
        return Err(Error::shape(
            "cross_entropy",
            Some(logits.index()),
            format!("{} targets for logits {:?}", targets.len(), s),
        ));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= s[1]) {
        return Err(Error::invalid(format!(
            "target class {} out of range for {} classes",
            t, s[1]
        )));
    }
    Ok(())
}

/// Mean over the batch of `-log softmax(logits)[target]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    check_targets(g, logits, targets)?;
    let lsm = g.log_softmax(logits)?;
    let picked = g.gather(lsm, targets)?;
    let m = g.mean(picked)?;
    Ok(g.scale(m, -1.0))
}

/// Sum over the batch of `-log softmax(logits)[target]`. Its gradient with
/// respect to each input row is that row's own loss gradient.
pub fn cross_entropy_sum(g: &mut Graph, logits: Var, targets: &[usize]) -> Result<Var> {
    check_targets(g, logits, targets)?;
    let lsm = g.log_softmax(logits)?;
    let picked = g.gather(lsm, targets)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, beta2: f64) -> Self {
        AdamConfig {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
        }
    }
}

impl Default for AdamConfig {
    /// Classifier setting: β = (0.5, 0.9) with a desk-scale learning rate.
    fn default() -> Self {
        AdamConfig::new(1e-3, 0.5, 0.9)
    }
}

/// Adam moments for one parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[Tensor]) -> Self {
        AdamState {
            config,
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients before
    /// touching any parameter.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != params.len() {
            return Err(Error::invalid(format!(
                "adam state tracks {} tensors, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() || p.len() != self.m[i].len() {
                return Err(Error::shape(
                    "adam_step",
                    None,
                    format!("param {:?} vs grad {:?}", p.shape(), g.shape()),
                ));
            }
            if !g.is_finite() {
                return Err(Error::NonFinite("gradient"));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(beta1, t as f64);
        let bc2 = 1.0 - libm::pow(beta2, t as f64);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }
}

/// Minibatch schedule for classifier training.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("epochs and batch_size must be positive"));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        Ok(())
    }
}

/// Rewrites a minibatch of inputs before the update step, given the model's
/// current parameters. Returns the inputs the loss is computed on.
pub trait BatchTransform {
    fn transform(&mut self, model: &Mlp, inputs: Tensor, batch_index: &[usize]) -> Result<Tensor>;
}

/// Leaves inputs unchanged.
pub struct Identity;

impl BatchTransform for Identity {
    fn transform(
        &mut self,
        _model: &Mlp,
        inputs: Tensor,
        _batch_index: &[usize],
    ) -> Result<Tensor> {
        Ok(inputs)
    }
}

/// Trains `model` with cross-entropy on `(inputs, targets)`.
///
/// Each epoch draws a fresh permutation from `rng` and walks it in
/// `batch_size` chunks (the last one may be short). `on_epoch` sees the
/// epoch index, the model after that epoch, and the mean batch loss.
/// Returns the per-epoch mean losses.
pub fn fit_classifier<T: BatchTransform>(
    model: &mut Mlp,
    inputs: &Tensor,
    targets: &[usize],
    config: &TrainConfig,
    rng: &mut Rng,
    transform: &mut T,
    mut on_epoch: impl FnMut(usize, &Mlp, f64),
) -> Result<Vec<f64>> {
    config.validate()?;
    let n = inputs.rows();
    if n == 0 || n != targets.len() {
        return Err(Error::invalid(format!(
            "{} inputs for {} targets",
            n,
            targets.len()
        )));
    }
    if inputs.cols() != model.input_width() {
        return Err(Error::shape(
            "fit_classifier",
            None,
            format!(
                "inputs have width {}, model expects {}",
                inputs.cols(),
                model.input_width()
            ),
        ));
    }
    let mut adam = AdamState::new(config.adam, model.params());
    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = permutation(rng, n);
        let mut total = 0.0;
        let mut batches = 0usize;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let batch = inputs.select_rows(idx);
            let batch = transform.transform(model, batch, idx)?;
            let batch_targets: Vec<usize> = idx.iter().map(|&i| targets[i]).collect();
            let mut g = Graph::new();
            let vars = model.bind(&mut g, true);
            let x = g.constant(batch);
            let logits = model.forward(&mut g, &vars, x)?;
            let loss = cross_entropy(&mut g, logits, &batch_targets)?;
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage: "classifier",
                    epoch,
                    step,
                    detail: format!("loss = {}", value),
                });
            }
            let grads = g.backward(loss, &vars.params)?;
            adam.step(model.params_mut(), &grads)
                .map_err(|e| Error::Diverged {
                    stage: "classifier",
                    epoch,
                    step,
                    detail: e.to_string(),
                })?;
            total += value;
            batches += 1;
        }
        let mean = total / batches as f64;
        losses.push(mean);
        on_epoch(epoch, model, mean);
    }
    Ok(losses)
}

/// Fraction of rows whose argmax matches `targets`.
pub fn classification_accuracy(model: &Mlp, inputs: &Tensor, targets: &[usize]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::invalid("accuracy of an empty set"));
    }
    let pred = model.predict(inputs)?;
    let hits = pred.iter().zip(targets).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / targets.len() as f64)
}
