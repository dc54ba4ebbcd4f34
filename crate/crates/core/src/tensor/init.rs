//! Seedable weight initialization.
//!
//! Dense and convolution weights use Kaiming-uniform bounds
//! `sqrt(6 / fan_in)`; recurrent weights use `1 / sqrt(fan_in)`; biases
//! start at zero.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Uniform draw in `(-bound, bound)` for every element.
pub fn uniform(rng: &mut ChaCha8Rng, count: usize, bound: f64) -> Vec<f64> {
    (0..count).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Kaiming-uniform weights for a layer whose inputs have `fan_in` values.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, count: usize, fan_in: usize) -> Vec<f64> {
    uniform(rng, count, (6.0 / fan_in as f64).sqrt())
}

/// Recurrent-weight initialization: uniform in `(-1, 1) / sqrt(fan_in)`.
pub fn recurrent_uniform(rng: &mut ChaCha8Rng, count: usize, fan_in: usize) -> Vec<f64> {
    uniform(rng, count, 1.0 / (fan_in as f64).sqrt())
}
