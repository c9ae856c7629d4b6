//! Seeding policy.
//!
//! A master seed expands into independent per-stage seeds with a
//! splitmix64 mix of the master seed and an FNV-1a hash of the stage label,
//! so each pipeline stage can be cached and rerun on its own.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::{Fnv, Tensor};

pub type Rng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for a named stage: `splitmix64(master ^ splitmix64(fnv1a(stage)))`.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    let mut h = Fnv::default();
    h.write_bytes(stage.as_bytes());
    splitmix64(master ^ splitmix64(h.0))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stage_rng(master: u64, stage: &str) -> Rng {
    rng_from_seed(derive_seed(master, stage))
}

pub fn standard_normal(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}

pub fn permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
