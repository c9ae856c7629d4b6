//! Representation encoders: a vanilla VAE trained on the ELBO and a
//! factorised variant that adds a total-correlation penalty estimated by a
//! latent discriminator (joint codes vs. dimension-wise permuted codes).
//!
//! The reconstruction term is a Gaussian log-likelihood with fixed variance,
//! i.e. `recon_weight · Σ_features (x − x̂)²` averaged over the batch. The KL
//! term is summed over latent dimensions and averaged over the batch.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{cross_entropy, Activation, AdamConfig, AdamState, Mlp, MlpSpec, MlpVars};
use crate::rng::{derive_seed, permutation, rng_from_seed, standard_normal, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VaeModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub latent_dim: usize,
}

/// Latent discriminator for the total-correlation estimate. Class 0 is
/// "joint sample", class 1 is "product of marginals".
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TcDiscriminator {
    pub model: Mlp,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: Activation,
    /// Total-correlation weight; 0 disables the penalty.
    pub gamma: f64,
    /// Multiplier of the summed squared reconstruction error.
    pub recon_weight: f64,
    pub vae_adam: AdamConfig,
    pub disc_adam: AdamConfig,
    pub disc_hidden_widths: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        VaeConfig {
            latent_dim: 10,
            hidden_widths: vec![64, 64],
            activation: Activation::LEAKY,
            gamma: 0.0,
            recon_weight: 1.0,
            vae_adam: AdamConfig::new(1e-3, 0.9, 0.999),
            disc_adam: AdamConfig::new(1e-4, 0.5, 0.9),
            disc_hidden_widths: vec![64, 64],
            epochs: 200,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "latent_dim, epochs and batch_size must be positive",
            ));
        }
        if !(self.gamma >= 0.0) || !(self.recon_weight > 0.0) {
            return Err(Error::invalid(format!(
                "need gamma >= 0 and recon_weight > 0, got {} and {}",
                self.gamma, self.recon_weight
            )));
        }
        Ok(())
    }
}

/// Result of a VAE training run: the frozen model and per-epoch mean losses.
#[derive(Debug, Clone)]
pub struct VaeTraining {
    pub model: VaeModel,
    pub discriminator: Option<TcDiscriminator>,
    pub losses: Vec<f64>,
}

impl VaeModel {
    pub fn new(input_width: usize, config: &VaeConfig, rng: &mut Rng) -> Result<Self> {
        let l = config.latent_dim;
        let encoder = Mlp::new(
            MlpSpec::new(
                input_width,
                config.hidden_widths.clone(),
                config.activation,
                2 * l,
            ),
            rng,
        )?;
        let mut dec_hidden = config.hidden_widths.clone();
        dec_hidden.reverse();
        let decoder = Mlp::new(
            MlpSpec::new(l, dec_hidden, config.activation, input_width),
            rng,
        )?;
        VaeModel::from_parts(encoder, decoder, l)
    }

    pub fn from_parts(encoder: Mlp, decoder: Mlp, latent_dim: usize) -> Result<Self> {
        if encoder.output_width() != 2 * latent_dim {
            return Err(Error::invalid(format!(
                "encoder emits {} values, need 2 × latent_dim = {}",
                encoder.output_width(),
                2 * latent_dim
            )));
        }
        if decoder.input_width() != latent_dim || decoder.output_width() != encoder.input_width() {
            return Err(Error::invalid(
                "decoder must map latent_dim back to the input width",
            ));
        }
        Ok(VaeModel {
            encoder,
            decoder,
            latent_dim,
        })
    }

    pub fn input_width(&self) -> usize {
        self.encoder.input_width()
    }

    pub fn fingerprint(&self) -> u64 {
        self.encoder.fingerprint() ^ self.decoder.fingerprint().rotate_left(17)
    }

    /// `(mu, logvar)` nodes for an input already on the graph.
    pub fn encode_vars(&self, g: &mut Graph, vars: &MlpVars, x: Var) -> Result<(Var, Var)> {
        let out = self.encoder.forward(g, vars, x)?;
        let l = self.latent_dim;
        Ok((g.slice(out, 1, 0, l)?, g.slice(out, 1, l, 2 * l)?))
    }

    pub fn encode(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut g = Graph::new();
        let vars = self.encoder.bind(&mut g, false);
        let xv = g.constant(x.clone());
        let (mu, logvar) = self.encode_vars(&mut g, &vars, xv)?;
        Ok((g.value(mu).clone(), g.value(logvar).clone()))
    }

    /// Deterministic latent code (posterior mean), used everywhere downstream.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.encode(x)?.0)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        self.decoder.logits(z)
    }
}

/// `z = mu + exp(0.5 · logvar) ⊙ noise`.
pub fn reparameterize(g: &mut Graph, mu: Var, logvar: Var, noise: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) || g.shape(mu) != g.shape(noise) {
        return Err(Error::shape(
            "reparameterize",
            Some(mu.index()),
            format!(
                "mu {:?}, logvar {:?}, noise {:?}",
                g.shape(mu),
                g.shape(logvar),
                g.shape(noise)
            ),
        ));
    }
    let half = g.scale(logvar, 0.5);
    let std = g.exp(half);
    let eps = g.mul(std, noise)?;
    g.add(mu, eps)
}

/// KL(N(mu, exp(logvar)) ‖ N(0, I)) summed over dimensions, averaged over rows.
pub fn kl_standard_normal(g: &mut Graph, mu: Var, logvar: Var) -> Result<Var> {
    if g.shape(mu) != g.shape(logvar) {
        return Err(Error::shape(
            "kl_standard_normal",
            Some(mu.index()),
            format!("mu {:?} vs logvar {:?}", g.shape(mu), g.shape(logvar)),
        ));
    }
    let rows = g.shape(mu).first().copied().unwrap_or(1).max(1);
    let mu2 = g.mul(mu, mu)?;
    let var = g.exp(logvar);
    let t = g.add(mu2, var)?;
    let t = g.sub(t, logvar)?;
    let t = g.add_scalar(t, -1.0);
    let s = g.sum(t);
    Ok(g.scale(s, 0.5 / rows as f64))
}

fn sum_squared_error(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    let rows = g.shape(target).first().copied().unwrap_or(1).max(1);
    let d = g.sub(pred, target)?;
    let sq = g.mul(d, d)?;
    let s = g.sum(sq);
    Ok(g.scale(s, 1.0 / rows as f64))
}

/// Negative ELBO for one batch with explicit reparameterisation noise.
pub fn elbo_loss(model: &VaeModel, x: &Tensor, noise: &Tensor, recon_weight: f64) -> Result<f64> {
    let mut g = Graph::new();
    let enc = model.encoder.bind(&mut g, false);
    let dec = model.decoder.bind(&mut g, false);
    let loss = build_elbo(&mut g, model, &enc, &dec, x, noise, recon_weight)?.0;
    Ok(g.value(loss).item())
}

/// Returns `(loss, z)`.
fn build_elbo(
    g: &mut Graph,
    model: &VaeModel,
    enc: &MlpVars,
    dec: &MlpVars,
    x: &Tensor,
    noise: &Tensor,
    recon_weight: f64,
) -> Result<(Var, Var)> {
    let xv = g.constant(x.clone());
    let (mu, logvar) = model.encode_vars(g, enc, xv)?;
    let nv = g.constant(noise.clone());
    let z = reparameterize(g, mu, logvar, nv)?;
    let recon = model.decoder.forward(g, dec, z)?;
    let rec = sum_squared_error(g, recon, xv)?;
    let rec = g.scale(rec, recon_weight);
    let kl = kl_standard_normal(g, mu, logvar)?;
    Ok((g.add(rec, kl)?, z))
}

/// Mean squared reconstruction error of the mean path (no sampling).
pub fn reconstruction_mse(model: &VaeModel, x: &Tensor) -> Result<f64> {
    let z = model.encode_mean(x)?;
    let recon = model.decode(&z)?;
    let n = x.len().max(1);
    Ok(recon
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n as f64)
}

/// Shuffles every column independently across rows.
pub fn permute_dims(z: &Tensor, rng: &mut Rng) -> Tensor {
    let (n, d) = (z.rows(), z.cols());
    let mut out = z.clone();
    for j in 0..d {
        let p = permutation(rng, n);
        for (i, &src) in p.iter().enumerate() {
            out.data_mut()[i * d + j] = z.data()[src * d + j];
        }
    }
    out
}

impl TcDiscriminator {
    pub fn new(
        latent_dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        Ok(TcDiscriminator {
            model: Mlp::new(MlpSpec::new(latent_dim, hidden, activation, 2), rng)?,
        })
    }

    /// Mean of `logit_joint − logit_permuted` over `codes`: the density-ratio
    /// estimate of total correlation.
    pub fn estimate_tc(&self, codes: &Tensor) -> Result<f64> {
        let logits = self.model.logits(codes)?;
        let n = logits.rows().max(1);
        Ok(logits.data().chunks(2).map(|r| r[0] - r[1]).sum::<f64>() / n as f64)
    }

    /// One discriminator update on a joint batch and its permuted copy.
    pub fn step(&mut self, adam: &mut AdamState, joint: &Tensor, rng: &mut Rng) -> Result<f64> {
        let permuted = permute_dims(joint, rng);
        let n = joint.rows();
        let mut g = Graph::new();
        let vars = self.model.bind(&mut g, true);
        let a = g.constant(joint.clone());
        let b = g.constant(permuted);
        let la = self.model.forward(&mut g, &vars, a)?;
        let lb = self.model.forward(&mut g, &vars, b)?;
        let ca = cross_entropy(&mut g, la, &vec![0; n])?;
        let cb = cross_entropy(&mut g, lb, &vec![1; n])?;
        let s = g.add(ca, cb)?;
        let loss = g.scale(s, 0.5);
        let grads = g.backward(loss, &vars.params)?;
        adam.step(self.model.params_mut(), &grads)?;
        Ok(g.value(loss).item())
    }

    /// Trains on fixed codes for `epochs` passes.
    pub fn fit(
        &mut self,
        codes: &Tensor,
        epochs: usize,
        batch_size: usize,
        adam: AdamConfig,
        rng: &mut Rng,
    ) -> Result<()> {
        let mut state = AdamState::new(adam, self.model.params());
        for _ in 0..epochs {
            let order = permutation(rng, codes.rows());
            for idx in order.chunks(batch_size) {
                if idx.len() < 2 {
                    continue;
                }
                let batch = codes.select_rows(idx);
                self.step(&mut state, &batch, rng)?;
            }
        }
        Ok(())
    }

    /// Classification accuracy on `codes` (label 0) plus a permuted copy (label 1).
    pub fn accuracy(&self, codes: &Tensor, rng: &mut Rng) -> Result<f64> {
        let permuted = permute_dims(codes, rng);
        let a = self.model.predict(codes)?;
        let b = self.model.predict(&permuted)?;
        let hits = a.iter().filter(|&&c| c == 0).count() + b.iter().filter(|&&c| c == 1).count();
        Ok(hits as f64 / (a.len() + b.len()) as f64)
    }
}

pub fn train_vanilla_vae(data: &Tensor, config: &VaeConfig) -> Result<VaeTraining> {
    train(data, config, false)
}

/// Factorised VAE. The VAE and discriminator updates alternate 1:1 per batch;
/// the discriminator draws its initialisation and permutations from its own
/// stream so that `gamma = 0` reproduces the vanilla trajectory exactly.
pub fn train_factor_vae(data: &Tensor, config: &VaeConfig) -> Result<VaeTraining> {
    train(data, config, true)
}

fn train(data: &Tensor, config: &VaeConfig, factorised: bool) -> Result<VaeTraining> {
    config.validate()?;
    let n = data.rows();
    if n == 0 || data.cols() == 0 {
        return Err(Error::invalid("VAE training data is empty"));
    }
    let stage = if factorised {
        "factor_vae"
    } else {
        "vanilla_vae"
    };
    let mut rng = rng_from_seed(derive_seed(config.seed, "vae"));
    let mut model = VaeModel::new(data.cols(), config, &mut rng)?;
    let mut disc_rng = rng_from_seed(derive_seed(config.seed, "tc_discriminator"));
    let mut disc = if factorised {
        Some(TcDiscriminator::new(
            config.latent_dim,
            config.disc_hidden_widths.clone(),
            config.activation,
            &mut disc_rng,
        )?)
    } else {
        None
    };
    let mut enc_adam = AdamState::new(config.vae_adam, model.encoder.params());
    let mut dec_adam = AdamState::new(config.vae_adam, model.decoder.params());
    let mut disc_adam = disc
        .as_ref()
        .map(|d| AdamState::new(config.disc_adam, d.model.params()));
    let l = config.latent_dim;

    let mut losses = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let order = permutation(&mut rng, n);
        let mut total = 0.0;
        let mut batches = 0;
        for (step, idx) in order.chunks(config.batch_size).enumerate() {
            let x = data.select_rows(idx);
            let noise = standard_normal(&mut rng, &[idx.len(), l]);
            let mut g = Graph::new();
            let enc = model.encoder.bind(&mut g, true);
            let dec = model.decoder.bind(&mut g, true);
            let (mut loss, z) =
                build_elbo(&mut g, &model, &enc, &dec, &x, &noise, config.recon_weight)?;
            if let (Some(d), true) = (&disc, config.gamma > 0.0) {
                let dv = d.model.bind(&mut g, false);
                let logits = d.model.forward(&mut g, &dv, z)?;
                let joint = g.slice(logits, 1, 0, 1)?;
                let marg = g.slice(logits, 1, 1, 2)?;
                let diff = g.sub(joint, marg)?;
                let tc = g.mean(diff)?;
                let tc = g.scale(tc, config.gamma);
                loss = g.add(loss, tc)?;
            }
            let value = g.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged {
                    stage,
                    epoch,
                    step,
                    detail: format!("loss = {}", value),
                });
            }
            let mut wrt = enc.params.clone();
            wrt.extend_from_slice(&dec.params);
            let mut grads = g.backward(loss, &wrt)?;
            let dec_grads = grads.split_off(enc.params.len());
            let diverged = |e: Error| Error::Diverged {
                stage,
                epoch,
                step,
                detail: e.to_string(),
            };
            enc_adam
                .step(model.encoder.params_mut(), &grads)
                .map_err(diverged)?;
            dec_adam
                .step(model.decoder.params_mut(), &dec_grads)
                .map_err(diverged)?;

            if let (Some(d), Some(st)) = (disc.as_mut(), disc_adam.as_mut()) {
                if idx.len() >= 2 {
                    let joint = g.value(z).clone();
                    d.step(st, &joint, &mut disc_rng).map_err(diverged)?;
                }
            }
            total += value;
            batches += 1;
        }
        losses.push(total / batches as f64);
    }
    Ok(VaeTraining {
        model,
        discriminator: disc,
        losses,
    })
}
