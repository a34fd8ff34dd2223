//! Seeded parameter initialisation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// He-uniform: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`, suited to ReLU stacks.
pub fn kaiming_uniform(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    uniform(rng, shape, bound)
}

pub fn uniform(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::param(data, shape).expect("shape matches generated data")
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::param(vec![0.0; shape.iter().product()], shape).expect("shape matches generated data")
}
