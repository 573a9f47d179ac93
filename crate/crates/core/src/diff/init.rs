//! Parameter initialization.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::Tensor;

/// Glorot uniform bound `sqrt(6 / (fan_in + fan_out))`. Rank-1 shapes use
/// their length for both fans.
pub fn glorot_bound(shape: &[usize]) -> f64 {
    let (fan_in, fan_out) = match shape {
        [n] => (*n, *n),
        [r, c] => (*r, *c),
        other => panic!("glorot init expects rank 1 or 2, got {other:?}"),
    };
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Seeded Glorot-uniform tensor: entries drawn from `U(-a, a)`.
pub fn glorot_init(shape: &[usize], seed: u64) -> Tensor {
    let a = glorot_bound(shape);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.random_range(-a..a)).collect();
    Tensor::new(shape.to_vec(), data)
}

/// Zero tensor; biases start at zero.
pub fn zeros_init(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape.to_vec())
}
