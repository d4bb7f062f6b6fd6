//! Lasso solver, KKT certification and equicorrelation-set extraction.
//!
//! The solver runs cyclic coordinate descent on
//! `(1/2n)||y - X b||^2 + lambda ||b||_1` and, whenever the sign pattern is
//! stable, finishes with an exact feature-sign active-set search.
//! A solution is only marked certified when the KKT residual, the boundary
//! deviations on the equicorrelation set and the duality gap are all within
//! tolerance.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::numerics::{cholesky_solve, soft_threshold, std_normal_cdf, sup_norm, Matrix, Vector};

/// Above this many columns the solver stops caching Gram columns and falls
/// back to residual updates.
pub const GRAM_CACHE_MAX_P: usize = 2000;
/// Budget of exact active-set solves per refinement attempt.
const ACTIVE_SET_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoSettings {
    /// Sweep stops when the largest coefficient change is below `tol * max(1, ||b||_inf)`.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Equicorrelation membership tolerance, relative to `lambda`.
    pub tol_equi_rel: f64,
    /// Certified gap is at most `gap_rel * max(1, primal)`.
    pub gap_rel: f64,
}

impl Default for LassoSettings {
    fn default() -> Self {
        LassoSettings { tol: 1e-10, max_sweeps: 100_000, tol_equi_rel: 1e-7, gap_rel: 1e-8 }
    }
}

#[derive(Debug, Clone)]
pub struct LassoSolution {
    pub beta: Vector,
    /// Sorted equicorrelation set `E`.
    pub equi_set: Vec<usize>,
    /// `sign(X_j^T (y - X b))` for `j` in `E`, aligned with `equi_set`.
    pub signs: Vec<f64>,
    pub lambda_l: f64,
    pub kkt_residual: f64,
    pub duality_gap: f64,
    pub primal: f64,
    pub certified: bool,
    pub sweeps: usize,
}

impl LassoSolution {
    pub fn support(&self) -> Vec<usize> {
        (0..self.beta.len()).filter(|&j| self.beta[j] != 0.0).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.equi_set.is_empty()
    }

    pub fn signs_vector(&self) -> Vector {
        Vector::from_column_slice(&self.signs)
    }

    pub fn to_record(&self) -> LassoRecord {
        LassoRecord {
            lambda_l: self.lambda_l,
            beta: self.support().into_iter().map(|j| (j, self.beta[j])).collect(),
            equi_set: self.equi_set.clone(),
            signs: self.signs.clone(),
            kkt_residual: self.kkt_residual,
            duality_gap: self.duality_gap,
            certified: self.certified,
        }
    }
}

/// Serializable view of a solution with `beta` stored as `(index, value)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoRecord {
    pub lambda_l: f64,
    pub beta: Vec<(usize, f64)>,
    pub equi_set: Vec<usize>,
    pub signs: Vec<f64>,
    pub kkt_residual: f64,
    pub duality_gap: f64,
    pub certified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KktCertificate {
    /// `max_j dist((1/n) X_j^T r, [-lambda, lambda])`.
    pub kkt_residual: f64,
    /// `max_{b_j != 0} |(1/n) X_j^T r - lambda sign(b_j)|`.
    pub max_boundary_deviation: f64,
    pub duality_gap: f64,
    pub primal: f64,
    pub dual: f64,
    pub equi_set: Vec<usize>,
    pub signs: Vec<f64>,
    pub support_in_equi: bool,
    pub passed: bool,
}

/// Checks a candidate coefficient vector against the Lasso optimality conditions.
pub fn certify(x: &Matrix, y: &Vector, beta: &Vector, lambda: f64, settings: &LassoSettings) -> KktCertificate {
    let n = x.nrows() as f64;
    let resid = y - x * beta;
    let grad = x.tr_mul(&resid) / n;
    certify_from_parts(beta, &resid, &grad, y, lambda, n, settings)
}

fn certify_from_parts(
    beta: &Vector,
    resid: &Vector,
    grad: &Vector,
    y: &Vector,
    lambda: f64,
    n: f64,
    settings: &LassoSettings,
) -> KktCertificate {
    let tol_equi = settings.tol_equi_rel * lambda;
    let kkt_residual = grad.iter().map(|g| (g.abs() - lambda).max(0.0)).fold(0.0, f64::max);
    let max_boundary_deviation = beta
        .iter()
        .zip(grad.iter())
        .filter(|(b, _)| **b != 0.0)
        .map(|(b, g)| (g - lambda * b.signum()).abs())
        .fold(0.0, f64::max);

    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let primal = resid.norm_squared() / (2.0 * n) + lambda * l1;
    let gmax = sup_norm(grad);
    let scale = if gmax > lambda { lambda / gmax } else { 1.0 };
    let u = resid * scale;
    let dual = u.dot(y) / n - u.norm_squared() / (2.0 * n);
    let duality_gap = (primal - dual).max(0.0);

    let equi_set: Vec<usize> = (0..grad.len()).filter(|&j| grad[j].abs() >= lambda - tol_equi).collect();
    let signs = equi_set.iter().map(|&j| grad[j].signum()).collect();
    let support_in_equi =
        beta.iter().enumerate().filter(|(_, b)| **b != 0.0).all(|(j, _)| equi_set.binary_search(&j).is_ok());

    let passed = kkt_residual <= tol_equi
        && max_boundary_deviation <= tol_equi
        && duality_gap <= settings.gap_rel * primal.max(1.0)
        && support_in_equi;
    KktCertificate {
        kkt_residual,
        max_boundary_deviation,
        duality_gap,
        primal,
        dual,
        equi_set,
        signs,
        support_in_equi,
        passed,
    }
}

/// Re-runs the certificate for an existing solution with default tolerances.
pub fn kkt_certificate(x: &Matrix, y: &Vector, sol: &LassoSolution) -> KktCertificate {
    certify(x, y, &sol.beta, sol.lambda_l, &LassoSettings::default())
}

/// Gram columns `X^T X_j / n`, either borrowed from a precomputed matrix or
/// computed on first use.
enum GramColumns<'a> {
    Shared(&'a Matrix),
    Lazy(Vec<Option<Vector>>),
    Disabled,
}

struct CoordinateDescent<'a> {
    x: &'a Matrix,
    y: &'a Vector,
    lambda: f64,
    n: f64,
    /// `||X_j||^2 / n`.
    col_scale: Vec<f64>,
    gram: GramColumns<'a>,
    beta: Vector,
    /// `(1/n) X^T r` in Gram mode.
    grad: Vector,
    /// `y - X beta` in residual mode.
    resid: Vector,
}

impl<'a> CoordinateDescent<'a> {
    fn new(x: &'a Matrix, y: &'a Vector, lambda: f64, gram: Option<&'a Matrix>) -> Self {
        let (n, p) = (x.nrows(), x.ncols());
        let nf = n as f64;
        let col_scale = x.column_iter().map(|c| c.norm_squared() / nf).collect();
        let gram = match gram {
            Some(g) => GramColumns::Shared(g),
            None if p <= GRAM_CACHE_MAX_P => GramColumns::Lazy(vec![None; p]),
            None => GramColumns::Disabled,
        };
        CoordinateDescent {
            x,
            y,
            lambda,
            n: nf,
            col_scale,
            gram,
            beta: Vector::zeros(p),
            grad: x.tr_mul(y) / nf,
            resid: y.clone(),
        }
    }

    /// One cyclic pass in index order; returns the largest coefficient change.
    fn sweep(&mut self) -> f64 {
        let mut max_change = 0.0f64;
        for j in 0..self.beta.len() {
            let scale = self.col_scale[j];
            if scale == 0.0 {
                continue;
            }
            let old = self.beta[j];
            let g = match self.gram {
                GramColumns::Disabled => self.x.column(j).dot(&self.resid) / self.n,
                _ => self.grad[j],
            };
            let new = soft_threshold(scale * old + g, self.lambda) / scale;
            let step = new - old;
            if step == 0.0 {
                continue;
            }
            self.beta[j] = new;
            max_change = max_change.max(step.abs());
            match &mut self.gram {
                GramColumns::Shared(gm) => self.grad.axpy(-step, &gm.column(j), 1.0),
                GramColumns::Lazy(cache) => {
                    let col = cache[j].get_or_insert_with(|| self.x.tr_mul(&self.x.column(j)) / self.n);
                    self.grad.axpy(-step, col, 1.0);
                }
                GramColumns::Disabled => self.resid.axpy(-step, &self.x.column(j), 1.0),
            }
        }
        max_change
    }

    /// Recomputes residual and gradient from scratch to shed accumulated drift.
    fn refresh(&mut self) {
        self.resid = self.y - self.x * &self.beta;
        self.grad = self.x.tr_mul(&self.resid) / self.n;
    }

    fn sign_pattern(&self) -> Vec<i8> {
        self.beta
            .iter()
            .map(|b| {
                if *b > 0.0 {
                    1
                } else if *b < 0.0 {
                    -1
                } else {
                    0
                }
            })
            .collect()
    }

    fn objective(&self, beta: &Vector) -> f64 {
        let r = self.y - self.x * beta;
        r.norm_squared() / (2.0 * self.n) + self.lambda * beta.lp_norm(1)
    }

    /// Feature-sign active-set search started from the CD iterate: exact
    /// solves on the active set with a line search over sign crossings, then
    /// adds the worst KKT violator. Returns `None` if the budget runs out.
    fn active_set_search(&self, max_iter: usize) -> Option<Vector> {
        let p = self.beta.len();
        let mut beta = self.beta.clone();
        let mut theta: Vec<f64> = beta.iter().map(|b| if *b == 0.0 { 0.0 } else { b.signum() }).collect();
        let mut iter = 0;
        loop {
            // Exact solves on the active set until the sign pattern is consistent.
            loop {
                iter += 1;
                if iter > max_iter {
                    return None;
                }
                let active: Vec<usize> = (0..p).filter(|&j| theta[j] != 0.0).collect();
                if active.is_empty() {
                    break;
                }
                let xs = crate::numerics::select_columns(self.x, &active);
                let gram = xs.tr_mul(&xs) / self.n;
                let th = Vector::from_iterator(active.len(), active.iter().map(|&j| theta[j]));
                let rhs = xs.tr_mul(self.y) / self.n - th * self.lambda;
                let target = cholesky_solve(&gram, &rhs).ok()?;
                let consistent = active.iter().zip(target.iter()).all(|(&j, t)| t * theta[j] > 0.0);
                let mut full_target = Vector::zeros(p);
                for (k, &j) in active.iter().enumerate() {
                    full_target[j] = target[k];
                }
                if consistent {
                    beta = full_target;
                    break;
                }
                let mut best = (self.objective(&full_target), full_target.clone(), None);
                for (k, &j) in active.iter().enumerate() {
                    let (b0, b1) = (beta[j], target[k]);
                    if b0 != 0.0 && b0 * b1 < 0.0 {
                        let t = b0 / (b0 - b1);
                        let mut cand = &beta + (&full_target - &beta) * t;
                        cand[j] = 0.0;
                        let f = self.objective(&cand);
                        if f < best.0 {
                            best = (f, cand, Some(j));
                        }
                    }
                }
                beta = best.1;
                for j in 0..p {
                    if Some(j) == best.2 || beta[j] == 0.0 {
                        beta[j] = 0.0;
                        theta[j] = 0.0;
                    } else {
                        theta[j] = beta[j].signum();
                    }
                }
            }
            let resid = self.y - self.x * &beta;
            let grad = self.x.tr_mul(&resid) / self.n;
            let violator = (0..p)
                .filter(|&j| theta[j] == 0.0)
                .map(|j| (j, grad[j].abs()))
                .filter(|&(_, g)| g > self.lambda * (1.0 + 1e-12))
                .max_by(|a, b| a.1.total_cmp(&b.1));
            match violator {
                Some((j, _)) => theta[j] = grad[j].signum(),
                None => return Some(beta),
            }
        }
    }
}

fn check_inputs(x: &Matrix, y: &Vector, lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return domain(format!("lambda_L must be positive and finite, got {lambda}"));
    }
    if x.nrows() != y.len() {
        return domain(format!("X has {} rows but y has length {}", x.nrows(), y.len()));
    }
    if x.ncols() == 0 {
        return domain("design has no columns");
    }
    Ok(())
}

pub fn solve_lasso(x: &Matrix, y: &Vector, lambda: f64, settings: &LassoSettings) -> Result<LassoSolution> {
    check_inputs(x, y, lambda)?;
    run_solver(CoordinateDescent::new(x, y, lambda, None), settings)
}

/// Same as [`solve_lasso`] with a precomputed `gram = X^T X / n`, which lets
/// many solves on one fixed design share the covariance work.
pub fn solve_lasso_with_gram(
    x: &Matrix,
    gram: &Matrix,
    y: &Vector,
    lambda: f64,
    settings: &LassoSettings,
) -> Result<LassoSolution> {
    check_inputs(x, y, lambda)?;
    if gram.nrows() != x.ncols() || gram.ncols() != x.ncols() {
        return domain("Gram matrix does not match the design");
    }
    run_solver(CoordinateDescent::new(x, y, lambda, Some(gram)), settings)
}

fn run_solver(mut cd: CoordinateDescent<'_>, settings: &LassoSettings) -> Result<LassoSolution> {
    let lambda = cd.lambda;
    let mut tol = settings.tol;
    let mut sweeps = 0;
    let mut prev_pattern = Vec::new();
    let mut tried_pattern = Vec::new();
    loop {
        let change = cd.sweep();
        sweeps += 1;
        let settled = change <= tol * sup_norm(&cd.beta).max(1.0);
        let exhausted = sweeps >= settings.max_sweeps;
        if !(settled || exhausted) {
            // A sign pattern that survives a full sweep is usually final; try
            // the exact solve once per pattern instead of waiting for CD to creep.
            let pattern = cd.sign_pattern();
            if pattern == prev_pattern && pattern != tried_pattern {
                if let Some(beta) = cd.active_set_search(ACTIVE_SET_MAX_ITER) {
                    let cert = certify(cd.x, cd.y, &beta, lambda, settings);
                    if cert.passed {
                        return Ok(finish(beta, cert, lambda, sweeps));
                    }
                }
                tried_pattern = pattern.clone();
            }
            prev_pattern = pattern;
            continue;
        }
        cd.refresh();
        if let Some(beta) = cd.active_set_search(ACTIVE_SET_MAX_ITER) {
            let cert = certify(cd.x, cd.y, &beta, lambda, settings);
            if cert.passed {
                return Ok(finish(beta, cert, lambda, sweeps));
            }
        }
        let cert = certify_from_parts(&cd.beta, &cd.resid, &cd.grad, cd.y, lambda, cd.n, settings);
        if cert.passed || exhausted {
            return Ok(finish(cd.beta.clone(), cert, lambda, sweeps));
        }
        tol = (tol * 1e-2).max(1e-16);
    }
}

fn finish(beta: Vector, cert: KktCertificate, lambda: f64, sweeps: usize) -> LassoSolution {
    LassoSolution {
        beta,
        equi_set: cert.equi_set,
        signs: cert.signs,
        lambda_l: lambda,
        kkt_residual: cert.kkt_residual.max(cert.max_boundary_deviation),
        duality_gap: cert.duality_gap,
        primal: cert.primal,
        certified: cert.passed,
        sweeps,
    }
}

/// `(X_E^T X_E)^{-1} (X_E^T y - n lambda s)`, the active-block closed form.
pub fn active_block_closed_form(
    x: &Matrix,
    y: &Vector,
    lambda: f64,
    equi_set: &[usize],
    signs: &[f64],
) -> Result<Vector> {
    let xe = crate::numerics::select_columns(x, equi_set);
    let n = x.nrows() as f64;
    let s = Vector::from_column_slice(signs);
    cholesky_solve(&xe.tr_mul(&xe), &(xe.tr_mul(y) - s * (n * lambda)))
}

/// Upper bound `Phi((lambda - ||Sigma_n beta0||_inf) / (sigma / sqrt(n)))` on
/// the probability that the Lasso selects nothing under Gaussian noise.
pub fn empty_set_probability_bound(sigma_beta0_inf: f64, lambda: f64, sigma: f64, n: usize) -> Result<f64> {
    if !(sigma > 0.0) {
        return domain(format!("noise scale must be positive, got {sigma}"));
    }
    if n == 0 {
        return domain("n must be >= 1");
    }
    Ok(std_normal_cdf((lambda - sigma_beta0_inf) / (sigma / (n as f64).sqrt())))
}

/// `||X^T X beta0 / n||_inf`.
pub fn sigma_beta0_inf(x: &Matrix, beta0: &Vector) -> f64 {
    sup_norm(&(x.tr_mul(&(x * beta0)) / x.nrows() as f64))
}
