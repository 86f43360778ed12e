//! Seeded fixtures shared by the benchmarks.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform entries in `[-1, 1)`.
pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

/// Random dictionary with unit-norm atoms.
pub fn random_dictionary(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
    let mut d = random_matrix(n, m, seed);
    for mut c in d.column_iter_mut() {
        let norm = c.norm();
        c /= norm;
    }
    d
}

/// Signals that are `sparsity`-sparse combinations of `d`'s atoms.
pub fn sparse_signals(d: &DMatrix<f64>, k: usize, sparsity: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = d.ncols();
    let mut x = DMatrix::zeros(m, k);
    for j in 0..k {
        for _ in 0..sparsity {
            x[(rng.gen_range(0..m), j)] = rng.gen_range(-4.0..4.0);
        }
    }
    d * x
}

/// Integer levels with mostly zeros, like quantized sparse codes.
pub fn sparse_levels(len: usize, density: f64, seed: u64) -> Vec<i32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            if rng.gen_bool(density) {
                rng.gen_range(-20..=20)
            } else {
                0
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_are_seeded() {
        assert_eq!(random_matrix(3, 4, 1), random_matrix(3, 4, 1));
        let d = random_dictionary(8, 16, 2);
        assert!(d.column_iter().all(|c| (c.norm() - 1.0).abs() < 1e-12));
        assert_eq!(sparse_signals(&d, 5, 2, 3).shape(), (8, 5));
        assert_eq!(sparse_levels(100, 0.1, 4), sparse_levels(100, 0.1, 4));
    }
}
