//! Variance-based rate model.
//!
//! The coding cost of a coefficient matrix `A` (M×K, one column per sample)
//! is estimated through its variance `tr(A Z Aᵀ)`, where `Z` is the K×K
//! centering operator with `K−1` on the diagonal and `−1` elsewhere. `Z`
//! has exactly two distinct singular values (0 on the all-ones direction and
//! K on its orthogonal complement), which is what makes the closed-form
//! updates in [`crate::admm`] cheap.

use std::f64::consts::{E, PI};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// The K×K centering operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CenteringOperator {
    k: usize,
}

impl CenteringOperator {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("centering operator needs k >= 1"));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let k = self.k;
        DMatrix::from_fn(k, k, |i, j| if i == j { (k - 1) as f64 } else { -1.0 })
    }
}

/// Materializes the centering operator for `k` samples.
pub fn centering_matrix(k: usize) -> Result<DMatrix<f64>> {
    Ok(CenteringOperator::new(k)?.to_dense())
}

/// Analytic SVD of the centering operator.
///
/// The basis is the normalized Helmert-type matrix: column 0 is the all-ones
/// vector, column `j ≥ 1` holds `j` leading ones followed by `−j` at row `j`
/// and zeros below. Only the `K` column scale factors are stored; entries and
/// products with the basis are evaluated on demand in O(K).
#[derive(Debug, Clone, PartialEq)]
pub struct ZSvd {
    k: usize,
    singular_values: Vec<f64>,
    inv_norms: Vec<f64>,
}

/// Builds the analytic SVD of the `k`-sample centering operator.
pub fn fast_z_svd(k: usize) -> Result<ZSvd> {
    if k < 2 {
        return Err(Error::invalid("fast_z_svd needs k >= 2"));
    }
    let mut singular_values = vec![k as f64; k];
    singular_values[0] = 0.0;
    let mut inv_norms = Vec::with_capacity(k);
    inv_norms.push(1.0 / (k as f64).sqrt());
    for j in 1..k {
        let j = j as f64;
        inv_norms.push(1.0 / (j * (j + 1.0)).sqrt());
    }
    Ok(ZSvd {
        k,
        singular_values,
        inv_norms,
    })
}

impl ZSvd {
    pub fn k(&self) -> usize {
        self.k
    }

    /// Singular values in basis order: 0 first, then `K` repeated `K−1` times.
    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Entry `(row, col)` of the orthonormal basis `V_Z`.
    pub fn basis_entry(&self, row: usize, col: usize) -> f64 {
        assert!(row < self.k && col < self.k, "basis index out of range");
        if col == 0 {
            return self.inv_norms[0];
        }
        match row.cmp(&col) {
            std::cmp::Ordering::Less => self.inv_norms[col],
            std::cmp::Ordering::Equal => -(col as f64) * self.inv_norms[col],
            std::cmp::Ordering::Greater => 0.0,
        }
    }

    pub fn basis_column(&self, col: usize) -> Vec<f64> {
        (0..self.k).map(|row| self.basis_entry(row, col)).collect()
    }

    /// Number of structurally nonzero basis entries.
    pub fn basis_nonzeros(&self) -> usize {
        // column 0 is full, column j has j + 1 entries
        self.k + (1..self.k).map(|j| j + 1).sum::<usize>()
    }

    pub fn dense_basis(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |i, j| self.basis_entry(i, j))
    }

    /// `V_Zᵀ x` in O(K).
    pub fn apply_basis_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.k);
        let mut out = Vec::with_capacity(self.k);
        out.push(x.iter().sum::<f64>() * self.inv_norms[0]);
        let mut prefix = 0.0;
        for j in 1..self.k {
            prefix += x[j - 1];
            out.push((prefix - j as f64 * x[j]) * self.inv_norms[j]);
        }
        out
    }

    /// `V_Z y` in O(K).
    pub fn apply_basis(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.k);
        let k = self.k;
        let mut out = vec![0.0; k];
        let mut suffix = 0.0;
        for i in (0..k).rev() {
            let own = if i == 0 {
                0.0
            } else {
                -(i as f64) * y[i] * self.inv_norms[i]
            };
            out[i] = y[0] * self.inv_norms[0] + own + suffix;
            if i > 0 {
                suffix += y[i] * self.inv_norms[i];
            }
        }
        out
    }

    /// `V_Z Σ V_Zᵀ`, which equals the centering operator.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let v = self.dense_basis();
        let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&self.singular_values));
        &v * sigma * v.transpose()
    }
}

/// `tr(A Z Aᵀ)` without forming Z.
///
/// Each row contributes `K·‖a‖² − (Σa)²`, evaluated as `K·Σ(a − ā)²` so that
/// constant rows give exactly zero.
pub fn coefficient_variance(a: &DMatrix<f64>) -> f64 {
    let k = a.ncols();
    if k == 0 {
        return 0.0;
    }
    let kf = k as f64;
    let mut total = 0.0;
    for row in a.row_iter() {
        let mean = row.iter().sum::<f64>() / kf;
        let dev: f64 = row.iter().map(|&v| (v - mean) * (v - mean)).sum();
        total += kf * dev;
    }
    total
}

/// Entropy estimate derived from a variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub variance: f64,
    pub gaussian_bound_bits: f64,
    pub laplacian_bits: f64,
}

impl RateEstimate {
    pub fn from_variance(variance: f64) -> Result<Self> {
        let gaussian_bound_bits = gaussian_entropy_bound(variance)?;
        let laplacian_bits = if variance > 0.0 {
            laplacian_entropy(variance)?
        } else {
            f64::NEG_INFINITY
        };
        Ok(Self {
            variance,
            gaussian_bound_bits,
            laplacian_bits,
        })
    }

    pub fn of_coefficients(a: &DMatrix<f64>) -> Result<Self> {
        Self::from_variance(coefficient_variance(a))
    }
}

/// Gap between the Gaussian bound and the Laplacian entropy, `log₂√(π/e)`.
pub fn laplacian_gap_bits() -> f64 {
    0.5 * (PI / E).log2()
}

/// Upper bound on differential entropy for a given variance, in bits.
/// Returns `-∞` for zero variance.
pub fn gaussian_entropy_bound(variance: f64) -> Result<f64> {
    if variance.is_nan() || variance < 0.0 {
        return Err(Error::invalid(format!("variance must be >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(0.5 * (2.0 * PI * E * variance).log2())
}

/// Differential entropy of a Laplacian source with the given variance, in bits.
pub fn laplacian_entropy(variance: f64) -> Result<f64> {
    if variance.is_nan() || variance <= 0.0 {
        return Err(Error::invalid(format!("variance must be > 0, got {variance}")));
    }
    Ok(gaussian_entropy_bound(variance)? - laplacian_gap_bits())
}
