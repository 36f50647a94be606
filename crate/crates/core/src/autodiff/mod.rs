//! Minimal reverse-mode automatic differentiation over dense matrices,
//! plus the Adam optimizer.

mod adam;
pub mod gradcheck;
mod tape;

use rand::Rng;

use crate::tensor::Tensor;

pub use adam::{AdamConfig, AdamState, OptimError};
pub use tape::{Aggregation, Gradients, Tape, Var};

/// Uniform Glorot initialization, `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}

pub fn uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect();
    Tensor::from_vec(rows, cols, data).expect("length matches")
}
