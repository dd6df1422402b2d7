#![allow(dead_code)]

use dccdi::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn uniform(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn normal(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// A'A + delta I for a random square A.
pub fn spd(n: usize, delta: f64, seed: u64) -> Matrix {
    let a = uniform(n, n, seed);
    a.t_matmul(&a).unwrap().add(&Matrix::identity(n).scale(delta)).unwrap()
}

/// Householder reflector I - 2 v v' / v'v.
pub fn householder(v: &[f64]) -> Matrix {
    let n = v.len();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - 2.0 * v[i] * v[j] / vv)
}
