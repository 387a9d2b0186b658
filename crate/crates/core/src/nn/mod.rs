//! Parametric building blocks: recursive cell, merge scorer, pre-chunk
//! bidirectional recurrence, and token embedding.

pub mod cells;
pub mod embedding;
pub mod prechunk;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::Tensor;

/// Epsilon inside the layer-norm square root. Small enough that normalized
/// outputs have unit variance to well below 1e-6 for non-degenerate inputs.
pub const LN_EPS: f64 = 1e-8;

/// Kaiming-uniform init for a `[fan_in, fan_out]` weight matrix.
pub fn kaiming_uniform(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let data: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::param(&[fan_in, fan_out], data).expect("shape matches data")
}

/// Uniform init with variance `1/d`, used for embedding rows.
pub fn embedding_init(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> Tensor {
    let bound = (3.0 / d as f64).sqrt();
    let data: Vec<f64> = (0..rows * d)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * bound)
        .collect();
    Tensor::param(&[rows, d], data).expect("shape matches data")
}

pub fn zeros_param(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape).requires_grad(true)
}

pub fn ones_param(shape: &[usize]) -> Tensor {
    Tensor::filled(shape, 1.0).requires_grad(true)
}
