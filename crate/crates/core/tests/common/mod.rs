#![allow(dead_code)]

use emi_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform entries in `[-scale, scale)`.
pub fn rand_tensor(shape: &[usize], scale: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| scale * (2.0 * rng.random::<f64>() - 1.0))
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Entries bounded away from zero, for probing through ReLU kinks.
pub fn rand_away_from_zero(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    rand_tensor(shape, 1.0, rng).map(|x| if x >= 0.0 { x + 0.1 } else { x - 0.1 })
}
