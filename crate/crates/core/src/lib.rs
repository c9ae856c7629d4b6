//! Debiasing downstream classifiers by perturbing latent codes with
//! gradient-explanation focuses.
//!
//! The crate is `no_std` (it needs `alloc`) and holds every numerical piece:
//! a small reverse-mode autodiff engine, MLPs with Adam, the VAE encoders,
//! the sensitive/task focuses, the bidirectional perturbation trainer,
//! group-fairness metrics, baselines and the coverage ablations.
//! File formats, configuration and the experiment CLI live in the `dvge`
//! crate.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod autodiff;
pub mod baselines;
pub mod data;
pub mod debias;
pub mod error;
pub mod explain;
pub mod fairness;
pub mod nn;
pub mod rng;
pub mod synth;
pub mod tensor;
pub mod vae;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
