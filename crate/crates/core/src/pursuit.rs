//! Orthogonal matching pursuit.
//!
//! Greedy baseline coder with either a sparsity stop (at most `L` atoms)
//! or an error stop (residual energy below `ε`). The active-set least
//! squares is maintained with an incrementally orthogonalized basis, so the
//! residual stays orthogonal to every selected atom.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PursuitStop {
    SparsityLimit(usize),
    ErrorEnergy(f64),
}

impl PursuitStop {
    fn validate(&self) -> Result<()> {
        match *self {
            PursuitStop::SparsityLimit(0) => Err(Error::invalid("sparsity limit must be positive")),
            PursuitStop::ErrorEnergy(e) if !(e > 0.0) || !e.is_finite() => {
                Err(Error::invalid("error energy must be a positive finite number"))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpSolution {
    /// Dense length-M coefficient vector.
    pub coefficients: DVector<f64>,
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    pub residual_energy: f64,
    /// Error-energy target not met with every usable atom selected.
    pub target_unreached: bool,
    /// Residual norm after each selection, starting with `‖s‖`.
    pub residual_norms: Vec<f64>,
}

impl OmpSolution {
    pub fn iterations(&self) -> usize {
        self.support.len()
    }
}

/// Relative size under which a residual or an orthogonalized atom counts
/// as zero.
const NUMERICAL_ZERO: f64 = 1e-12;

pub fn omp(signal: &[f64], d: &DMatrix<f64>, stop: PursuitStop) -> Result<OmpSolution> {
    stop.validate()?;
    let (n, m) = d.shape();
    if m == 0 || n == 0 {
        return Err(Error::invalid("dictionary is empty"));
    }
    if signal.len() != n {
        return Err(Error::shape(format!(
            "signal length {} != atom length {n}",
            signal.len()
        )));
    }
    let s = DVector::from_column_slice(signal);
    let s_norm = s.norm();
    let mut residual = s.clone();
    let mut support: Vec<usize> = Vec::new();
    let mut q_basis: Vec<DVector<f64>> = Vec::new();
    // upper-triangular factor: d_support = Q R
    let mut r_cols: Vec<Vec<f64>> = Vec::new();
    let mut usable = vec![true; m];
    let mut residual_norms = vec![s_norm];
    let limit = match stop {
        PursuitStop::SparsityLimit(l) => l.min(m),
        PursuitStop::ErrorEnergy(_) => m,
    };

    loop {
        let energy = residual.norm_squared();
        if let PursuitStop::ErrorEnergy(eps) = stop {
            if energy < eps {
                break;
            }
        }
        if support.len() >= limit || residual.norm() <= NUMERICAL_ZERO * s_norm.max(f64::MIN_POSITIVE) || s_norm == 0.0
        {
            break;
        }
        let corr = d.tr_mul(&residual);
        let mut best: Option<(usize, f64)> = None;
        for (j, c) in corr.iter().enumerate() {
            if !usable[j] {
                continue;
            }
            let c = c.abs();
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((j, c));
            }
        }
        let Some((j, c)) = best else { break };
        if c <= NUMERICAL_ZERO * s_norm {
            break;
        }
        usable[j] = false;
        let atom = d.column(j).into_owned();
        let atom_norm = atom.norm();
        let mut q = atom.clone();
        let mut coeffs = vec![0.0; q_basis.len()];
        // two passes of modified Gram-Schmidt
        for _ in 0..2 {
            for (i, qi) in q_basis.iter().enumerate() {
                let p = qi.dot(&q);
                coeffs[i] += p;
                q.axpy(-p, qi, 1.0);
            }
        }
        let q_norm = q.norm();
        if q_norm <= 1e-10 * atom_norm {
            // linearly dependent on the active set
            continue;
        }
        q /= q_norm;
        coeffs.push(q_norm);
        let step = q.dot(&residual);
        residual.axpy(-step, &q, 1.0);
        q_basis.push(q);
        r_cols.push(coeffs);
        support.push(j);
        residual_norms.push(residual.norm());
    }

    // back-substitution R x = Qᵀ s
    let k = support.len();
    let qts: Vec<f64> = q_basis.iter().map(|q| q.dot(&s)).collect();
    let mut x = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = qts[i];
        for (c, xc) in x.iter().enumerate().skip(i + 1) {
            acc -= r_cols[c][i] * xc;
        }
        x[i] = acc / r_cols[i][i];
    }
    let mut coefficients = DVector::zeros(m);
    for (&j, &v) in support.iter().zip(&x) {
        coefficients[j] = v;
    }
    let final_residual = &s - d * &coefficients;
    let residual_energy = final_residual.norm_squared();
    let target_unreached = match stop {
        PursuitStop::ErrorEnergy(eps) => residual_energy >= eps,
        PursuitStop::SparsityLimit(_) => false,
    };
    Ok(OmpSolution {
        coefficients,
        support,
        residual_energy,
        target_unreached,
        residual_norms,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OmpBatch {
    /// M×K coefficients.
    pub coefficients: DMatrix<f64>,
    /// Columns whose error target was not reached.
    pub unreached: Vec<usize>,
}

/// Column-wise OMP. Columns are solved independently (in parallel).
pub fn omp_batch(s: &DMatrix<f64>, d: &DMatrix<f64>, stop: PursuitStop) -> Result<OmpBatch> {
    stop.validate()?;
    if s.nrows() != d.nrows() {
        return Err(Error::shape("signal rows differ from atom length"));
    }
    let solutions: Vec<OmpSolution> = (0..s.ncols())
        .into_par_iter()
        .map(|k| omp(s.column(k).as_slice(), d, stop))
        .collect::<Result<_>>()?;
    let mut coefficients = DMatrix::zeros(d.ncols(), s.ncols());
    let mut unreached = Vec::new();
    for (k, sol) in solutions.into_iter().enumerate() {
        coefficients.set_column(k, &sol.coefficients);
        if sol.target_unreached {
            unreached.push(k);
        }
    }
    Ok(OmpBatch {
        coefficients,
        unreached,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_dictionary(rng: &mut ChaCha8Rng, n: usize, m: usize) -> DMatrix<f64> {
        let mut d = DMatrix::from_fn(n, m, |_, _| rng.gen_range(-1.0..1.0));
        d.column_iter_mut().for_each(|mut c| {
            c.normalize_mut();
        });
        d
    }

    #[test]
    fn exact_atom_is_found() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let d = random_dictionary(&mut rng, 6, 10);
        let sol = omp(d.column(3).as_slice(), &d, PursuitStop::SparsityLimit(1)).unwrap();
        assert_eq!(sol.support, vec![3]);
        assert!((sol.coefficients[3] - 1.0).abs() < 1e-12);
        assert_eq!(sol.coefficients.iter().filter(|v| **v != 0.0).count(), 1);
    }

    #[test]
    fn zero_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = random_dictionary(&mut rng, 6, 10);
        let sol = omp(&[0.0; 6], &d, PursuitStop::SparsityLimit(3)).unwrap();
        assert_eq!(sol.iterations(), 0);
        assert_eq!(sol.coefficients, DVector::zeros(10));
        let sol = omp(&[0.0; 6], &d, PursuitStop::ErrorEnergy(1e-3)).unwrap();
        assert_eq!(sol.iterations(), 0);
        assert!(!sol.target_unreached);
    }

    #[test]
    fn residual_is_orthogonal_to_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let d = random_dictionary(&mut rng, 8, 20);
        let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol = omp(&s, &d, PursuitStop::SparsityLimit(5)).unwrap();
        let r = DVector::from_column_slice(&s) - &d * &sol.coefficients;
        for &j in &sol.support {
            assert!(d.column(j).dot(&r).abs() < 1e-10);
        }
        assert!(sol.residual_norms.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn error_stop_and_flag() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let d = random_dictionary(&mut rng, 8, 20);
        let s: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let sol = omp(&s, &d, PursuitStop::ErrorEnergy(0.05)).unwrap();
        assert!(sol.residual_energy < 0.05);
        assert!(!sol.target_unreached);

        // two atoms cannot span a 3-d signal
        let d2 = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let sol = omp(&[1.0, 1.0, 1.0], &d2, PursuitStop::ErrorEnergy(0.5)).unwrap();
        assert!(sol.target_unreached);
        assert_eq!(sol.iterations(), 2);
    }

    #[test]
    fn ties_break_low() {
        let d = DMatrix::from_column_slice(2, 3, &[1.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let sol = omp(&[1.0, 0.0], &d, PursuitStop::SparsityLimit(1)).unwrap();
        assert_eq!(sol.support, vec![0]);
    }

    #[test]
    fn bad_stop_rejected() {
        let d = DMatrix::identity(2, 2);
        assert!(omp(&[1.0, 0.0], &d, PursuitStop::SparsityLimit(0)).is_err());
        assert!(omp(&[1.0, 0.0], &d, PursuitStop::ErrorEnergy(0.0)).is_err());
        assert!(omp(&[1.0], &d, PursuitStop::SparsityLimit(1)).is_err());
    }

    #[test]
    fn batch_matches_columns() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let d = random_dictionary(&mut rng, 6, 12);
        let s = DMatrix::from_fn(6, 9, |_, _| rng.gen_range(-1.0..1.0));
        let batch = omp_batch(&s, &d, PursuitStop::SparsityLimit(2)).unwrap();
        for k in 0..9 {
            let single = omp(s.column(k).as_slice(), &d, PursuitStop::SparsityLimit(2)).unwrap();
            assert_eq!(batch.coefficients.column(k), single.coefficients);
        }
        let one = omp_batch(&s.columns(4, 1).into_owned(), &d, PursuitStop::SparsityLimit(2)).unwrap();
        assert_eq!(one.coefficients.column(0), batch.coefficients.column(4));
    }
}
