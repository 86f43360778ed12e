//! Variance-constrained sparse coding by ADMM.
//!
//! Minimizes `½‖S − DA‖² + α‖A‖₀ + (β/2)·tr(A Z Aᵀ)` over the coefficient
//! matrix `A` by splitting it into `A = J` (data term) and `A = G`
//! (variance term). Every sub-problem has a closed form:
//!
//! * `A` is a hard threshold of the averaged auxiliaries,
//! * `J` is a ridge solve diagonalized by the SVD of `D`,
//! * `G` is a two-eigenvalue filter along the sample axis.
//!
//! The penalty `μ` grows geometrically up to `μ_max`.

use std::fmt::Write as _;
use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::rate_model::coefficient_variance;

/// Solver settings. The defaults for `mu0`, `mu_max`, `rho` and `eps` are
/// the published ones.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodingParams {
    pub alpha: f64,
    pub beta: f64,
    pub mu0: f64,
    pub mu_max: f64,
    pub rho: f64,
    pub eps: f64,
    pub max_iters: usize,
    /// Record the objective after every iteration. Costs one N×M×K product
    /// per iteration.
    pub record_trajectory: bool,
    /// Post-processing of the converged iterate, see [`Finish`].
    pub finish: Finish,
}

/// What happens to the converged iterate before it is returned.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Finish {
    /// Return the last iterate as is.
    None,
    /// Re-solve the quadratic part of the objective on the converged
    /// support. The growing penalty freezes the iterates slightly away from
    /// the stationary point; the refit removes that bias.
    Refit,
    /// Refit, then alternate hard-thresholded gradient steps with refits
    /// until the support settles (see [`polish_support`]). Never raises
    /// the objective.
    Polish,
}

impl Finish {
    pub fn id(self) -> u8 {
        match self {
            Finish::None => 0,
            Finish::Refit => 1,
            Finish::Polish => 2,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Finish::None),
            1 => Some(Finish::Refit),
            2 => Some(Finish::Polish),
            _ => None,
        }
    }
}

impl SparseCodingParams {
    pub const DEFAULT_MU0: f64 = 1e-2;
    pub const DEFAULT_MU_MAX: f64 = 1e8;
    pub const DEFAULT_RHO: f64 = 1.2;
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MAX_ITERS: usize = 2000;

    pub fn new(alpha: f64, beta: f64) -> Self {
        Self {
            alpha,
            beta,
            mu0: Self::DEFAULT_MU0,
            mu_max: Self::DEFAULT_MU_MAX,
            rho: Self::DEFAULT_RHO,
            eps: Self::DEFAULT_EPS,
            max_iters: Self::DEFAULT_MAX_ITERS,
            record_trajectory: false,
            finish: Finish::Polish,
        }
    }

    pub fn with_finish(mut self, finish: Finish) -> Self {
        self.finish = finish;
        self
    }

    pub fn with_trajectory(mut self, on: bool) -> Self {
        self.record_trajectory = on;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.alpha, self.beta, self.mu0, self.mu_max, self.rho, self.eps]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::invalid("solver parameters must be finite"));
        }
        if self.alpha < 0.0 {
            return Err(Error::invalid("alpha must be >= 0"));
        }
        if self.beta < 0.0 {
            return Err(Error::invalid("beta must be >= 0"));
        }
        if self.mu0 <= 0.0 || self.mu_max <= 0.0 || self.mu0 > self.mu_max {
            return Err(Error::invalid("need 0 < mu0 <= mu_max"));
        }
        if self.rho < 1.0 {
            return Err(Error::invalid("rho must be >= 1"));
        }
        if self.eps <= 0.0 {
            return Err(Error::invalid("eps must be > 0"));
        }
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters must be positive"));
        }
        Ok(())
    }
}

/// Primal, auxiliary and multiplier matrices of the splitting, all M×K.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub a: DMatrix<f64>,
    pub j: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub mu: f64,
    pub iter: usize,
}

impl AdmmState {
    /// `A = J = G = init`, zero multipliers.
    pub fn new(init: DMatrix<f64>, mu: f64) -> Self {
        let zeros = DMatrix::zeros(init.nrows(), init.ncols());
        Self {
            j: init.clone(),
            g: init.clone(),
            a: init,
            r0: zeros.clone(),
            r1: zeros,
            mu,
            iter: 0,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.a.shape()
    }

    fn check(&self) -> Result<()> {
        let shape = self.a.shape();
        if [&self.j, &self.g, &self.r0, &self.r1]
            .iter()
            .any(|m| m.shape() != shape)
        {
            return Err(Error::shape("ADMM state matrices differ in shape"));
        }
        if !(self.mu > 0.0) {
            return Err(Error::invalid("penalty must be positive"));
        }
        Ok(())
    }
}

/// SVD of the dictionary, cached for the duration of a solve.
#[derive(Debug, Clone)]
pub struct DictionaryFactors {
    d: DMatrix<f64>,
    vd: DMatrix<f64>,
    sigma_sq: DVector<f64>,
    /// Indices of the columns of `vd` with nonzero singular value.
    range: Vec<usize>,
    pinv: DMatrix<f64>,
}

/// Singular values below this fraction of the largest are treated as zero.
const PINV_RCOND: f64 = 1e-12;

impl DictionaryFactors {
    pub fn new(d: &DMatrix<f64>) -> Result<Self> {
        let (n, m) = d.shape();
        if n == 0 || m == 0 {
            return Err(Error::shape("dictionary must be nonempty"));
        }
        if d.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dictionary has non-finite entries"));
        }
        // Pad wide dictionaries with zero rows so the SVD returns a full
        // M×M right basis.
        let rows = n.max(m);
        let mut padded = DMatrix::zeros(rows, m);
        padded.rows_mut(0, n).copy_from(d);
        let svd = nalgebra::linalg::SVD::new(padded, true, true);
        let u = svd.u.expect("u requested");
        let v_t = svd.v_t.expect("v_t requested");
        let sv = svd.singular_values;
        let vd = v_t.transpose();
        let smax = sv.iter().cloned().fold(0.0f64, f64::max);
        let cutoff = PINV_RCOND * smax;
        let range: Vec<usize> = (0..m).filter(|&i| smax > 0.0 && sv[i] > cutoff).collect();
        let sigma_sq = DVector::from_iterator(m, sv.iter().map(|s| s * s));

        let mut pinv = DMatrix::zeros(m, n);
        for &i in &range {
            let inv = 1.0 / sv[i];
            let ui = u.column(i);
            let vi = vd.column(i);
            for c in 0..n {
                let w = ui[c] * inv;
                if w != 0.0 {
                    pinv.column_mut(c).axpy(w, &vi, 1.0);
                }
            }
        }
        Ok(Self {
            d: d.clone(),
            vd,
            sigma_sq,
            range,
            pinv,
        })
    }

    pub fn dictionary(&self) -> &DMatrix<f64> {
        &self.d
    }

    /// Right singular vectors `V_D`, M×M.
    pub fn vd(&self) -> &DMatrix<f64> {
        &self.vd
    }

    /// Squared singular values, zero-padded to length M.
    pub fn sigma_sq(&self) -> &DVector<f64> {
        &self.sigma_sq
    }

    pub fn rank(&self) -> usize {
        self.range.len()
    }

    /// Largest eigenvalue of `DᵀD`.
    pub fn lambda_max(&self) -> f64 {
        self.sigma_sq.iter().cloned().fold(0.0, f64::max)
    }

    pub fn pseudo_inverse(&self) -> &DMatrix<f64> {
        &self.pinv
    }

    /// `D†S`.
    pub fn pinv_apply(&self, s: &DMatrix<f64>) -> DMatrix<f64> {
        &self.pinv * s
    }

    /// `V_D (Σᵀ Σ + μI)⁻¹ V_Dᵀ x`.
    ///
    /// Directions outside the row space of `D` only see the `1/μ` scaling, so
    /// the product is applied through the rank-r part alone.
    pub fn ridge_solve(&self, x: &DMatrix<f64>, mu: f64) -> DMatrix<f64> {
        let inv_mu = 1.0 / mu;
        let mut out = x * inv_mu;
        if self.range.is_empty() {
            return out;
        }
        let vr = self.vd.select_columns(self.range.iter());
        let mut proj = vr.transpose() * x;
        for (row, &i) in self.range.iter().enumerate() {
            let w = 1.0 / (self.sigma_sq[i] + mu) - inv_mu;
            proj.row_mut(row).scale_mut(w);
        }
        out.gemm(1.0, &vr, &proj, 1.0);
        out
    }
}

/// `dst += alpha·src`
fn add_scaled(dst: &mut DMatrix<f64>, alpha: f64, src: &DMatrix<f64>) {
    dst.zip_apply(src, |d, s| *d += alpha * s);
}

/// Elementwise `x` if `|x| > eps`, else 0.
pub fn hard_threshold(x: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    x.map(|v| if v.abs() > eps { v } else { 0.0 })
}

/// `A = H_{√(α/μ)}((J + G − (R₀ + R₁)/μ) / 2)`.
pub fn update_a(state: &AdmmState, params: &SparseCodingParams) -> DMatrix<f64> {
    let inv_mu = 1.0 / state.mu;
    let threshold = (params.alpha / state.mu).sqrt();
    let mut avg = &state.j + &state.g;
    add_scaled(&mut avg, -inv_mu, &state.r0);
    add_scaled(&mut avg, -inv_mu, &state.r1);
    avg.iter_mut().for_each(|v| {
        *v *= 0.5;
        if v.abs() <= threshold {
            *v = 0.0;
        }
    });
    avg
}

/// Minimizer of `½‖S − DJ‖² + (μ/2)‖A − J + R₀/μ‖²`.
pub fn update_j(state: &AdmmState, factors: &DictionaryFactors, s: &DMatrix<f64>) -> DMatrix<f64> {
    let dts = factors.dictionary().tr_mul(s);
    update_j_with(state, factors, &dts)
}

fn update_j_with(state: &AdmmState, factors: &DictionaryFactors, dts: &DMatrix<f64>) -> DMatrix<f64> {
    let mut rhs = dts + &state.r0;
    add_scaled(&mut rhs, state.mu, &state.a);
    factors.ridge_solve(&rhs, state.mu)
}

/// `G = (μA + R₁) V_Z (βΣ_Z + μI)⁻¹ V_Zᵀ`.
///
/// With Σ_Z = diag(0, K, …, K) the filter is `c₁·I + c₂·𝟙𝟙ᵀ/K` where
/// `c₁ = 1/(βK + μ)` and `c₂ = 1/μ − c₁`: row means pass with gain `1/μ`,
/// deviations from them with gain `c₁`.
pub fn update_g(state: &AdmmState, params: &SparseCodingParams) -> DMatrix<f64> {
    let mu = state.mu;
    let k = state.a.ncols();
    let mut w = &state.r1 + &state.a * mu;
    if k == 0 {
        return w;
    }
    let c1 = 1.0 / (params.beta * k as f64 + mu);
    let c2 = 1.0 / mu - c1;
    for mut row in w.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / k as f64;
        let shift = c2 * mean;
        row.iter_mut().for_each(|v| *v = c1 * *v + shift);
    }
    w
}

/// `R₀ + μ(A − J)` and `R₁ + μ(A − G)`.
pub fn update_multipliers(state: &AdmmState) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut r0 = state.r0.clone();
    add_scaled(&mut r0, state.mu, &state.a);
    add_scaled(&mut r0, -state.mu, &state.j);
    let mut r1 = state.r1.clone();
    add_scaled(&mut r1, state.mu, &state.a);
    add_scaled(&mut r1, -state.mu, &state.g);
    (r0, r1)
}

pub fn update_penalty(mu: f64, params: &SparseCodingParams) -> f64 {
    (params.rho * mu).min(params.mu_max)
}

/// Terms of the objective at one iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectiveTerms {
    /// `½‖S − DA‖²`
    pub fidelity: f64,
    /// `‖A‖₀`
    pub nonzeros: usize,
    /// `tr(A Z Aᵀ)`
    pub variance: f64,
    pub objective: f64,
}

impl ObjectiveTerms {
    pub fn evaluate(s: &DMatrix<f64>, d: &DMatrix<f64>, a: &DMatrix<f64>, alpha: f64, beta: f64) -> Self {
        let fidelity = 0.5 * (s - d * a).norm_squared();
        let nonzeros = a.iter().filter(|v| **v != 0.0).count();
        let variance = coefficient_variance(a);
        Self {
            fidelity,
            nonzeros,
            variance,
            objective: fidelity + alpha * nonzeros as f64 + 0.5 * beta * variance,
        }
    }
}

/// `½‖S − DA‖² + α‖A‖₀ + (β/2)·tr(A Z Aᵀ)`.
pub fn objective_value(s: &DMatrix<f64>, d: &DMatrix<f64>, a: &DMatrix<f64>, alpha: f64, beta: f64) -> f64 {
    ObjectiveTerms::evaluate(s, d, a, alpha, beta).objective
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub mu: f64,
    pub terms: ObjectiveTerms,
}

/// Relative residuals checked for convergence.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    /// ‖A − J‖/‖A‖
    pub a_j: f64,
    /// ‖A − G‖/‖A‖
    pub a_g: f64,
    /// ‖Aʲ − Aʲ⁻¹‖/‖Aʲ‖
    pub step: f64,
}

impl Residuals {
    fn below(&self, eps: f64) -> bool {
        self.a_j <= eps && self.a_g <= eps && self.step <= eps
    }
}

/// Schema id of the iteration trace CSV.
pub const TRACE_SCHEMA: &str = "gvcsr-trace/1";

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub converged: bool,
    pub residuals: Residuals,
    pub final_mu: f64,
    pub trajectory: Vec<IterationRecord>,
    /// Objective terms of the returned coefficients.
    pub final_terms: ObjectiveTerms,
    /// Conjugate-gradient steps spent in the support refit.
    pub refit_steps: usize,
    /// Thresholded gradient steps taken by the polish.
    pub polish_steps: usize,
}

impl SolveReport {
    /// True when the iteration cap was hit before the residuals fell below ε.
    pub fn non_convergence(&self) -> bool {
        !self.converged
    }

    /// CSV with one row per recorded iteration:
    /// `iter,fidelity,variance,objective`, after a schema comment line.
    pub fn write_trace<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "# schema: {TRACE_SCHEMA}")?;
        writeln!(out, "iter,fidelity,variance,objective")?;
        for rec in &self.trajectory {
            writeln!(
                out,
                "{},{:.12e},{:.12e},{:.12e}",
                rec.iter, rec.terms.fidelity, rec.terms.variance, rec.terms.objective
            )?;
        }
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "iterations={} converged={} res_aj={:.3e} res_ag={:.3e} res_step={:.3e} mu={:.3e}",
            self.iterations, self.converged, self.residuals.a_j, self.residuals.a_g, self.residuals.step, self.final_mu
        );
        s
    }
}

fn check_shapes(s: &DMatrix<f64>, d: &DMatrix<f64>) -> Result<()> {
    if s.nrows() != d.nrows() {
        return Err(Error::shape(format!(
            "signal rows {} != dictionary rows {}",
            s.nrows(),
            d.nrows()
        )));
    }
    if s.ncols() == 0 {
        return Err(Error::shape("no samples"));
    }
    Ok(())
}

/// Sparse-codes `s` over `d` with the default starting penalty.
pub fn sparse_code(
    s: &DMatrix<f64>,
    d: &DMatrix<f64>,
    params: &SparseCodingParams,
) -> Result<(DMatrix<f64>, SolveReport)> {
    params.validate()?;
    check_shapes(s, d)?;
    for (j, col) in d.column_iter().enumerate() {
        if col.norm_squared() > 1.0 + 1e-9 {
            return Err(Error::invalid(format!("atom {j} has norm above 1")));
        }
    }
    let factors = DictionaryFactors::new(d)?;
    let init = factors.pinv_apply(s);
    Ok(solve_from(s, &factors, params, AdmmState::new(init, params.mu0)))
}

/// Runs the iteration from an explicit starting state. The dictionary
/// factors must belong to the dictionary `s` is coded over.
pub fn solve_from(
    s: &DMatrix<f64>,
    factors: &DictionaryFactors,
    params: &SparseCodingParams,
    mut state: AdmmState,
) -> (DMatrix<f64>, SolveReport) {
    debug_assert!(state.check().is_ok());
    let d = factors.dictionary();
    let dts = d.tr_mul(s);
    let mut trajectory = Vec::new();
    let mut residuals = Residuals::default();
    let mut converged = false;

    while state.iter < params.max_iters {
        let next_a = update_a(&state, params);
        let prev_a = std::mem::replace(&mut state.a, next_a);
        state.j = update_j_with(&state, factors, &dts);
        state.g = update_g(&state, params);
        let (r0, r1) = update_multipliers(&state);
        state.r0 = r0;
        state.r1 = r1;
        let mu_used = state.mu;
        state.mu = update_penalty(state.mu, params);
        state.iter += 1;

        let a_norm = state.a.norm();
        let diff_j = (&state.a - &state.j).norm();
        let diff_g = (&state.a - &state.g).norm();
        let diff_step = (&state.a - &prev_a).norm();
        if params.record_trajectory {
            trajectory.push(IterationRecord {
                iter: state.iter,
                mu: mu_used,
                terms: ObjectiveTerms::evaluate(s, d, &state.a, params.alpha, params.beta),
            });
        }
        if a_norm > 0.0 {
            residuals = Residuals {
                a_j: diff_j / a_norm,
                a_g: diff_g / a_norm,
                step: diff_step / a_norm,
            };
            if residuals.below(params.eps) {
                converged = true;
                break;
            }
        } else {
            // A = 0: fall back to absolute residuals.
            residuals = Residuals {
                a_j: diff_j,
                a_g: diff_g,
                step: diff_step,
            };
            if residuals.below(params.eps) {
                converged = true;
                break;
            }
        }
    }

    let mut a = state.a;
    let (mut refit_steps, mut polish_steps) = (0, 0);
    match params.finish {
        Finish::None => {}
        Finish::Refit => refit_steps = refit_on_support(s, d, &mut a, params.beta),
        Finish::Polish => {
            let stats = polish_support(s, d, &mut a, params.alpha, params.beta, factors.lambda_max());
            refit_steps = stats.refit_steps;
            polish_steps = stats.gradient_steps;
        }
    }
    let report = SolveReport {
        iterations: state.iter,
        converged,
        residuals,
        final_mu: state.mu,
        trajectory,
        final_terms: ObjectiveTerms::evaluate(s, d, &a, params.alpha, params.beta),
        refit_steps,
        polish_steps,
    };
    (a, report)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PolishStats {
    pub gradient_steps: usize,
    pub refit_steps: usize,
}

const POLISH_MAX_ROUNDS: usize = 100;

/// Alternates exact refits on the current support with one hard-thresholded
/// gradient step `A ← H_{√(2α/L)}(A − ∇f(A)/L)`, where `f` is the smooth
/// part of the objective and `L = λ_max(DᵀD) + βK` its gradient Lipschitz
/// constant, until a step leaves the support unchanged.
///
/// Each thresholded step minimizes a majorizer of the objective, so neither
/// step type can raise it; the result satisfies the fixed-point condition
/// of the thresholded step. For `D = I`, `β = 0` a single step lands on the
/// coordinate-wise minimizer, which keeps `s_i` exactly when `s_i² > 2α`.
pub fn polish_support(
    s: &DMatrix<f64>,
    d: &DMatrix<f64>,
    a: &mut DMatrix<f64>,
    alpha: f64,
    beta: f64,
    lambda_max: f64,
) -> PolishStats {
    let k = a.ncols();
    let lipschitz = lambda_max + beta * k as f64;
    let mut stats = PolishStats {
        refit_steps: refit_on_support(s, d, a, beta),
        ..PolishStats::default()
    };
    if !(lipschitz > 0.0) {
        return stats;
    }
    let threshold = (2.0 * alpha / lipschitz).sqrt();
    let mut objective = objective_value(s, d, a, alpha, beta);
    for _ in 0..POLISH_MAX_ROUNDS {
        // ∇f = Dᵀ(DA − S) + β·K·(A − row means)
        let mut grad = d.tr_mul(&(d * &*a - s));
        if beta > 0.0 {
            for (mut g, row) in grad.row_iter_mut().zip(a.row_iter()) {
                let mean = row.sum() / k as f64;
                g.zip_apply(&row, |gv, av| *gv += beta * k as f64 * (av - mean));
            }
        }
        let mut next = &*a - grad / lipschitz;
        next.iter_mut().for_each(|v| {
            if v.abs() <= threshold {
                *v = 0.0;
            }
        });
        stats.gradient_steps += 1;
        let same_support = a.iter().zip(next.iter()).all(|(x, y)| (*x != 0.0) == (*y != 0.0));
        if same_support {
            break;
        }
        let refit = refit_on_support(s, d, &mut next, beta);
        let value = objective_value(s, d, &next, alpha, beta);
        if !(value < objective) {
            break;
        }
        stats.refit_steps += refit;
        objective = value;
        *a = next;
    }
    stats
}

const REFIT_MAX_STEPS: usize = 1000;
const REFIT_TOL: f64 = 1e-13;

/// Per-column restriction of the refit problem to the column's support.
struct SupportBlock {
    rows: Vec<usize>,
    gram: DMatrix<f64>,
    /// Cholesky factor of `gram + βK·I` (with a tiny ridge if singular).
    precond: Option<nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>>,
}

/// Minimizes `½‖S − DA‖² + (β/2)·tr(A Z Aᵀ)` over the entries of `a` that
/// are currently nonzero, warm-started at `a`. Returns the number of
/// conjugate-gradient steps taken.
///
/// The Hessian is block diagonal over columns (support Gram matrices plus
/// `βK·I`) except for the row-mean coupling `−β𝟙𝟙ᵀ`, which has rank at
/// most M. Preconditioning with the block diagonal part therefore
/// converges in a handful of steps, and in one step when `β = 0`.
pub fn refit_on_support(s: &DMatrix<f64>, d: &DMatrix<f64>, a: &mut DMatrix<f64>, beta: f64) -> usize {
    let (m, k) = a.shape();
    let kf = k as f64;
    let blocks: Vec<SupportBlock> = (0..k)
        .map(|c| {
            let rows: Vec<usize> = (0..m).filter(|&i| a[(i, c)] != 0.0).collect();
            let ds = d.select_columns(rows.iter());
            let gram = ds.tr_mul(&ds);
            let mut shifted = gram.clone();
            shifted.iter_mut().step_by(rows.len() + 1).for_each(|v| *v += beta * kf);
            let precond = nalgebra::linalg::Cholesky::new(shifted.clone()).or_else(|| {
                let jitter = 1e-12 * shifted.trace().max(1.0);
                shifted.iter_mut().step_by(rows.len() + 1).for_each(|v| *v += jitter);
                nalgebra::linalg::Cholesky::new(shifted)
            });
            SupportBlock { rows, gram, precond }
        })
        .collect();
    if blocks.iter().all(|b| b.rows.is_empty()) {
        return 0;
    }

    // vectors live as per-column coefficient lists on the support
    type Blocks = Vec<DVector<f64>>;
    let dot = |x: &Blocks, y: &Blocks| x.iter().zip(y).map(|(u, v)| u.dot(v)).sum::<f64>();
    let apply = |x: &Blocks| -> Blocks {
        let mut row_sum = vec![0.0; m];
        if beta > 0.0 {
            for (b, xb) in blocks.iter().zip(x) {
                for (&i, v) in b.rows.iter().zip(xb.iter()) {
                    row_sum[i] += v;
                }
            }
        }
        blocks
            .iter()
            .zip(x)
            .map(|(b, xb)| {
                let mut y = &b.gram * xb;
                if beta > 0.0 {
                    for (t, &i) in b.rows.iter().enumerate() {
                        y[t] += beta * (kf * xb[t] - row_sum[i]);
                    }
                }
                y
            })
            .collect()
    };
    let precondition = |r: &Blocks| -> Blocks {
        blocks
            .iter()
            .zip(r)
            .map(|(b, rb)| match &b.precond {
                Some(ch) => ch.solve(rb),
                None => rb.clone(),
            })
            .collect()
    };

    let mut x: Blocks = blocks
        .iter()
        .enumerate()
        .map(|(c, b)| DVector::from_iterator(b.rows.len(), b.rows.iter().map(|&i| a[(i, c)])))
        .collect();
    let rhs: Blocks = blocks
        .iter()
        .enumerate()
        .map(|(c, b)| {
            let sc = s.column(c);
            DVector::from_iterator(b.rows.len(), b.rows.iter().map(|&i| d.column(i).dot(&sc)))
        })
        .collect();
    let tol = REFIT_TOL * dot(&rhs, &rhs).sqrt().max(f64::MIN_POSITIVE);
    let hx = apply(&x);
    let mut r: Blocks = rhs.iter().zip(&hx).map(|(b, h)| b - h).collect();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut steps = 0;
    while steps < REFIT_MAX_STEPS && dot(&r, &r).sqrt() > tol {
        let hp = apply(&p);
        let php = dot(&p, &hp);
        if !(php > 0.0) || !(rz > 0.0) {
            break;
        }
        let step = rz / php;
        for ((xb, rb), (pb, hb)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&hp)) {
            xb.axpy(step, pb, 1.0);
            rb.axpy(-step, hb, 1.0);
        }
        z = precondition(&r);
        let rz_next = dot(&r, &z);
        let ratio = rz_next / rz;
        for (pb, zb) in p.iter_mut().zip(&z) {
            *pb *= ratio;
            *pb += zb;
        }
        rz = rz_next;
        steps += 1;
    }
    for (c, (b, xb)) in blocks.iter().zip(&x).enumerate() {
        for (&i, v) in b.rows.iter().zip(xb.iter()) {
            a[(i, c)] = *v;
        }
    }
    steps
}
