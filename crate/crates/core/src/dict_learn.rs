//! Dictionary learning under the variance-constrained objective.
//!
//! Each outer round codes the training set to convergence with
//! [`crate::admm`], refreshes the atoms one at a time with a rank-1 SVD of
//! their restricted residual (K-SVD rule), resets the coefficients to `D†S`
//! with zero multipliers, and restarts the penalty at `κα / min|A_nz|`.
//!
//! That restart rule is scale dependent: the next round's first threshold
//! is `√(min|A_nz| / κ)`, which for pixel-valued patches is far below the
//! magnitude of the dense `D†S` reset, so the codes stay dense and the
//! objective grows. [`PenaltyRestart::Initial`] restarts every round from
//! `μ₀` instead, which behaves like the first round on every dictionary.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::admm::{solve_from, AdmmState, DictionaryFactors, ObjectiveTerms, SolveReport, SparseCodingParams};
use crate::error::{Error, Result};
use crate::pursuit::{omp_batch, PursuitStop};

pub use crate::dictionary::{DictHash, Dictionary};

/// Starting penalty of the coding pass after each dictionary update.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PenaltyRestart {
    /// `κα / min|A_nz|` of the previous round's coefficients.
    Rescheduled,
    /// The solver's `μ₀`.
    Initial,
}

impl PenaltyRestart {
    pub fn id(self) -> u8 {
        match self {
            PenaltyRestart::Rescheduled => 0,
            PenaltyRestart::Initial => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(PenaltyRestart::Rescheduled),
            1 => Some(PenaltyRestart::Initial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnParams {
    pub sparse: SparseCodingParams,
    /// Number of dictionary updates.
    pub outer_iters: usize,
    /// Penalty guide for the restart after each dictionary update.
    pub kappa: f64,
    pub restart: PenaltyRestart,
    pub seed: u64,
}

impl LearnParams {
    pub const DEFAULT_KAPPA: f64 = 4.0;
    pub const DEFAULT_OUTER_ITERS: usize = 20;

    pub fn new(sparse: SparseCodingParams, seed: u64) -> Self {
        Self {
            sparse,
            outer_iters: Self::DEFAULT_OUTER_ITERS,
            kappa: Self::DEFAULT_KAPPA,
            restart: PenaltyRestart::Rescheduled,
            seed,
        }
    }

    pub fn with_outer_iters(mut self, outer_iters: usize) -> Self {
        self.outer_iters = outer_iters;
        self
    }

    pub fn with_restart(mut self, restart: PenaltyRestart) -> Self {
        self.restart = restart;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.sparse.validate()?;
        if !(self.kappa >= 1.0) || !self.kappa.is_finite() {
            return Err(Error::invalid("kappa must be >= 1"));
        }
        Ok(())
    }
}

fn random_unit(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(n, |_, _| StandardNormal.sample(rng));
        let norm: f64 = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

/// Picks `m` distinct training columns (seeded) and normalizes them. Zero
/// columns, and any atoms beyond the number of samples, become seeded
/// random unit vectors.
pub fn init_dictionary(s: &DMatrix<f64>, m: usize, seed: u64) -> Result<Dictionary> {
    if m == 0 {
        return Err(Error::invalid("atom count must be positive"));
    }
    let (n, k) = s.shape();
    if n == 0 || k == 0 {
        return Err(Error::invalid("training set is empty"));
    }
    if s.iter().all(|v| *v == 0.0) {
        return Err(Error::invalid("training set is all zero"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks = index::sample(&mut rng, k, m.min(k)).into_vec();
    let mut atoms = DMatrix::zeros(n, m);
    for (j, &col) in picks.iter().enumerate() {
        let c = s.column(col);
        let norm = c.norm();
        if norm > 0.0 {
            atoms.set_column(j, &(c / norm));
        } else {
            atoms.set_column(j, &random_unit(&mut rng, n));
        }
    }
    for j in picks.len()..m {
        atoms.set_column(j, &random_unit(&mut rng, n));
    }
    Dictionary::new(atoms)
}

/// Leading left singular vector and singular value of `e`, with the
/// largest-magnitude entry of the vector made positive.
fn leading_left_singular(e: &DMatrix<f64>) -> (DVector<f64>, f64) {
    let gram = e * e.transpose();
    let eig = gram.symmetric_eigen();
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    let mut u = eig.eigenvectors.column(best).into_owned();
    u.normalize_mut();
    let lead = u.iamax();
    if u[lead] < 0.0 {
        u.neg_mut();
    }
    let sigma = eig.eigenvalues[best].max(0.0).sqrt();
    (u, sigma)
}

/// One K-SVD sweep over the atoms in ascending order. Rows of `a` on each
/// atom's support are replaced by the refreshed coefficients.
pub fn update_dictionary(s: &DMatrix<f64>, a: &mut DMatrix<f64>, d: &Dictionary) -> Result<Dictionary> {
    let mut atoms = d.atoms().clone();
    let (n, m) = atoms.shape();
    if s.nrows() != n || a.nrows() != m || a.ncols() != s.ncols() {
        return Err(Error::shape("update_dictionary: inconsistent shapes"));
    }
    let mut residual = s - &atoms * &*a;
    let mut used_as_replacement = vec![false; s.ncols()];

    for j in 0..m {
        let support: Vec<usize> = a
            .row(j)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        if support.is_empty() {
            // Replace the dead atom with the worst-reconstructed sample.
            let mut worst: Option<(usize, f64)> = None;
            for (i, col) in residual.column_iter().enumerate() {
                if used_as_replacement[i] {
                    continue;
                }
                let e = col.norm_squared();
                if worst.is_none_or(|(_, w)| e > w) {
                    worst = Some((i, e));
                }
            }
            if let Some((i, e)) = worst {
                if e > 0.0 {
                    used_as_replacement[i] = true;
                    let col = residual.column(i).into_owned();
                    atoms.set_column(j, &(col.clone() / col.norm()));
                }
            }
            continue;
        }

        let atom = atoms.column(j).into_owned();
        let mut e = DMatrix::zeros(n, support.len());
        for (c, &i) in support.iter().enumerate() {
            let mut col = residual.column(i).into_owned();
            col.axpy(a[(j, i)], &atom, 1.0);
            e.set_column(c, &col);
        }
        let (u, sigma) = leading_left_singular(&e);
        if sigma == 0.0 {
            // restricted residual vanished; keep the atom, drop its row
            for &i in &support {
                let mut col = residual.column_mut(i);
                col.axpy(-a[(j, i)], &atom, 1.0);
                a[(j, i)] = 0.0;
            }
            continue;
        }
        let row = e.tr_mul(&u);
        for (c, &i) in support.iter().enumerate() {
            a[(j, i)] = row[c];
            let mut col = e.column(c).into_owned();
            col.axpy(-row[c], &u, 1.0);
            residual.set_column(i, &col);
        }
        atoms.set_column(j, &u);
    }
    Dictionary::new(atoms)
}

/// `κα / min|A_nz|`, clamped to `mu_max`; `mu_max` when `A` is all zero.
pub fn penalty_reschedule(a: &DMatrix<f64>, alpha: f64, kappa: f64, mu_max: f64) -> f64 {
    let min_nz = a
        .iter()
        .filter(|v| **v != 0.0)
        .map(|v| v.abs())
        .fold(f64::INFINITY, f64::min);
    if !min_nz.is_finite() {
        return mu_max;
    }
    let mu = kappa * alpha / min_nz;
    if mu > 0.0 {
        mu.min(mu_max)
    } else {
        mu_max
    }
}

/// `√2·λ_max(DᵀD)`: penalty level above which the convergence guarantee
/// applies.
pub fn penalty_bound(d: &Dictionary) -> Result<f64> {
    let factors = DictionaryFactors::new(d.atoms())?;
    Ok(std::f64::consts::SQRT_2 * factors.lambda_max())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 0 for the initial dictionary, then one per dictionary update.
    pub round: usize,
    pub terms: ObjectiveTerms,
    pub inner_iterations: usize,
    pub converged: bool,
    pub mu_start: f64,
    pub mu_final: f64,
    pub penalty_bound: f64,
}

impl RoundRecord {
    pub fn mu_exceeds_bound(&self) -> bool {
        self.mu_final > self.penalty_bound
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LearnReport {
    pub rounds: Vec<RoundRecord>,
}

impl LearnReport {
    pub fn all_converged(&self) -> bool {
        self.rounds.iter().all(|r| r.converged)
    }
}

fn code_round(
    s: &DMatrix<f64>,
    d: &Dictionary,
    params: &SparseCodingParams,
    mu_start: f64,
    round: usize,
) -> Result<(DMatrix<f64>, SolveReport, RoundRecord)> {
    let factors = DictionaryFactors::new(d.atoms())?;
    let init = factors.pinv_apply(s);
    let (a, report) = solve_from(s, &factors, params, AdmmState::new(init, mu_start));
    let record = RoundRecord {
        round,
        terms: report.final_terms,
        inner_iterations: report.iterations,
        converged: report.converged,
        mu_start,
        mu_final: report.final_mu,
        penalty_bound: std::f64::consts::SQRT_2 * factors.lambda_max(),
    };
    Ok((a, report, record))
}

/// Learns an `m`-atom dictionary for the columns of `s`.
pub fn learn(s: &DMatrix<f64>, m: usize, params: &LearnParams) -> Result<(Dictionary, DMatrix<f64>, LearnReport)> {
    params.validate()?;
    let mut d = init_dictionary(s, m, params.seed)?;
    let sparse = &params.sparse;
    let mut report = LearnReport::default();

    let (mut a, _, record) = code_round(s, &d, sparse, sparse.mu0, 0)?;
    report.rounds.push(record);

    for round in 1..=params.outer_iters {
        let mu_next = match params.restart {
            PenaltyRestart::Rescheduled => penalty_reschedule(&a, sparse.alpha, params.kappa, sparse.mu_max),
            PenaltyRestart::Initial => sparse.mu0,
        };
        let mut refreshed = a.clone();
        d = update_dictionary(s, &mut refreshed, &d)?;
        let (coded, _, record) = code_round(s, &d, sparse, mu_next, round)?;
        a = coded;
        report.rounds.push(record);
    }
    Ok((d, a, report))
}

/// K-SVD with OMP sparsity-limited coding, from the same seeded
/// initialization as [`learn`]. Baseline for comparisons.
pub fn learn_ksvd(
    s: &DMatrix<f64>,
    m: usize,
    sparsity: usize,
    outer_iters: usize,
    seed: u64,
) -> Result<(Dictionary, DMatrix<f64>)> {
    let mut d = init_dictionary(s, m, seed)?;
    let stop = PursuitStop::SparsityLimit(sparsity);
    for _ in 0..outer_iters {
        let mut a = omp_batch(s, d.atoms(), stop)?.coefficients;
        d = update_dictionary(s, &mut a, &d)?;
    }
    let a = omp_batch(s, d.atoms(), stop)?.coefficients;
    Ok((d, a))
}

/// `½‖S − DA‖²`
pub fn fidelity(s: &DMatrix<f64>, d: &Dictionary, a: &DMatrix<f64>) -> f64 {
    0.5 * (s - d.atoms() * a).norm_squared()
}
