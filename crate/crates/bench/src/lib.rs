//! Input generators shared by the benchmarks.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use brainalign::synthetic::gaussian_matrix;

/// Features and targets with a linear relation plus noise.
pub fn regression_problem(n: usize, p: usize, q: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = gaussian_matrix(n, p, &mut rng);
    let w = gaussian_matrix(p, q, &mut rng);
    let y = &x * w + gaussian_matrix(n, q, &mut rng);
    (x, y)
}

pub fn stimulus_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:04}")).collect()
}
