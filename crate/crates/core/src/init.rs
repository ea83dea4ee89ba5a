//! Seeded parameter initialization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tensor::Tensor;

pub type Rng = ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `N(0, std²)` entries for a leaf of the given shape.
pub fn normal(rng: &mut Rng, shape: &[usize], std: f64, requires_grad: bool) -> Tensor {
    let dist = Normal::new(0.0, std).expect("std must be finite and non-negative");
    let data = (0..shape.iter().product::<usize>()).map(|_| dist.sample(rng)).collect();
    Tensor::leaf(shape, data, requires_grad).expect("shape and data agree by construction")
}

pub fn constant(shape: &[usize], value: f64, requires_grad: bool) -> Tensor {
    Tensor::leaf(shape, vec![value; shape.iter().product()], requires_grad)
        .expect("shape and data agree by construction")
}
