//! Seeded parameter initialization.
//!
//! Weights draw from a uniform fan-scaled range, +-sqrt(6 / (fan_in +
//! fan_out)); convolution fans include the kernel width. Every draw goes
//! through the run's seeded generator so experiments reproduce bit-exactly.

use super::tensor::Tensor;
use rand::Rng;

pub fn uniform_fan(rng: &mut impl Rng, fan_in: usize, fan_out: usize, shape: &[usize]) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::new(shape.to_vec(), data).expect("bounded draws are finite")
}

/// Dense weight [f_in, f_out].
pub fn dense_weight(rng: &mut impl Rng, f_in: usize, f_out: usize) -> Tensor {
    uniform_fan(rng, f_in, f_out, &[f_in, f_out])
}

/// Convolution kernel [c_out, c_in, k].
pub fn conv_kernel(rng: &mut impl Rng, c_out: usize, c_in: usize, k: usize) -> Tensor {
    uniform_fan(rng, c_in * k, c_out * k, &[c_out, c_in, k])
}

/// Scoring vector of length m, treated as an m -> 1 map.
pub fn score_vector(rng: &mut impl Rng, m: usize) -> Tensor {
    uniform_fan(rng, m, 1, &[m])
}
