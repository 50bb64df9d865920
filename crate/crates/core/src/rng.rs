//! Seed derivation. Every random draw in the crate comes from a ChaCha
//! stream derived from the run seed and a purpose tag, so that runs are
//! reproducible and resumable at any step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tensor::Tensor;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, tags...)`.
pub fn derive_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix64(seed);
    for &t in tags {
        h = splitmix64(h ^ splitmix64(t.wrapping_add(0xA24B_AED4_963E_E407)));
    }
    ChaCha8Rng::seed_from_u64(h)
}

/// Child seed for `(seed, tags...)`, for APIs that take a plain seed.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    use rand::RngCore;
    derive_rng(seed, tags).next_u64()
}

/// Standard normal tensor of the given shape.
pub fn normal_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| StandardNormal.sample(rng)).collect::<Vec<f32>>();
    Tensor::from_vec(shape, data).expect("shape")
}

pub mod tags {
    pub const INIT: u64 = 1;
    pub const BATCH: u64 = 2;
    pub const NOISE: u64 = 3;
    pub const FEATURES: u64 = 4;
    pub const SPARSIFY: u64 = 5;
    pub const KMEANS: u64 = 6;
    pub const SCENE: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const EVAL: u64 = 9;
}
