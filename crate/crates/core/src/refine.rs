//! Lasso-Ridge refinement: a ridge correction restricted to the
//! equicorrelation set, shrunk towards the Lasso fit with `lambda_R = c |E|`.
//!
//! Under the Lasso KKT conditions the correction has the closed form
//! `delta_E = lambda_L (Sigma_E + lambda_R I)^{-1} s`, where
//! `Sigma_E = X_E^T X_E / n`. The deterministic part of the prediction gap,
//! `H = 2 lambda_L <delta_E, s> - (1/n) ||X_E delta_E||^2`, equals
//! `lambda_L^2 s^T P diag((mu + 2 lambda_R) / (mu + lambda_R)^2) P^T s`
//! in the eigenbasis of `Sigma_E`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};
use crate::lasso::LassoSolution;
use crate::numerics::{cholesky_solve, select_columns, sym_eig, Matrix, Vector};

#[derive(Debug, Clone)]
pub struct RefinedEstimate {
    /// Zero outside `E`.
    pub delta_hat: Vector,
    pub beta_r: Vector,
    pub lambda_r: f64,
    pub c: f64,
    pub h_value: f64,
    /// `||delta_E||_1`.
    pub l1_delta: f64,
}

impl RefinedEstimate {
    /// `delta_hat` restricted to `equi_set`, in set order.
    pub fn delta_on(&self, equi_set: &[usize]) -> Vector {
        Vector::from_iterator(equi_set.len(), equi_set.iter().map(|&j| self.delta_hat[j]))
    }
}

/// Per-refinement summary row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementRecord {
    pub e_size: usize,
    pub lambda_r: f64,
    pub h_value: f64,
    pub l1_delta: f64,
    pub delta_gap: f64,
}

/// `X_E^T X_E / n`.
pub fn restricted_gram(x: &Matrix, equi_set: &[usize]) -> Matrix {
    let xe = select_columns(x, equi_set);
    xe.tr_mul(&xe) / x.nrows() as f64
}

/// Refines a certified Lasso solution with `lambda_R = c |E|`.
pub fn refine(x: &Matrix, sol: &LassoSolution, c: f64) -> Result<RefinedEstimate> {
    let gram_e = restricted_gram(x, &sol.equi_set);
    refine_with_gram(&gram_e, sol, c)
}

/// Same as [`refine`] given a precomputed `Sigma_E`.
pub fn refine_with_gram(gram_e: &Matrix, sol: &LassoSolution, c: f64) -> Result<RefinedEstimate> {
    if !(c > 0.0 && c.is_finite()) {
        return domain(format!("refinement multiplier c must be positive, got {c}"));
    }
    if !sol.certified {
        return domain("refinement needs a certified Lasso solution");
    }
    let p = sol.beta.len();
    let k = sol.equi_set.len();
    if k == 0 {
        return Ok(RefinedEstimate {
            delta_hat: Vector::zeros(p),
            beta_r: sol.beta.clone(),
            lambda_r: 0.0,
            c,
            h_value: 0.0,
            l1_delta: 0.0,
        });
    }
    if gram_e.nrows() != k || gram_e.ncols() != k {
        return domain("restricted Gram does not match the equicorrelation set");
    }
    let lambda_r = c * k as f64;
    let lambda_l = sol.lambda_l;
    let s = sol.signs_vector();
    let shifted = gram_e + Matrix::identity(k, k) * lambda_r;
    let delta_e = cholesky_solve(&shifted, &(&s * lambda_l))?;

    let mut delta_hat = Vector::zeros(p);
    for (i, &j) in sol.equi_set.iter().enumerate() {
        delta_hat[j] = delta_e[i];
    }
    let h_value = compute_h(lambda_l, &s, lambda_r, gram_e)?;
    let l1_delta = delta_e.iter().map(|v| v.abs()).sum();
    Ok(RefinedEstimate { beta_r: &sol.beta + &delta_hat, delta_hat, lambda_r, c, h_value, l1_delta })
}

/// `H` through the eigendecomposition of `Sigma_E`; zero for an empty set.
pub fn compute_h(lambda_l: f64, signs: &Vector, lambda_r: f64, gram_e: &Matrix) -> Result<f64> {
    if signs.is_empty() {
        return Ok(0.0);
    }
    let eig = sym_eig(gram_e)?;
    let q = eig.quadratic_form(signs, |mu| (mu + 2.0 * lambda_r) / ((mu + lambda_r) * (mu + lambda_r)));
    Ok(lambda_l * lambda_l * q)
}

/// `H` from its definition `2 lambda_L <delta_E, s> - delta_E^T Sigma_E delta_E`.
pub fn h_definitional(lambda_l: f64, signs: &Vector, delta_e: &Vector, gram_e: &Matrix) -> f64 {
    2.0 * lambda_l * delta_e.dot(signs) - delta_e.dot(&(gram_e * delta_e))
}

/// `(1/n) ||X (b - beta0)||^2`.
pub fn prediction_error(x: &Matrix, beta: &Vector, beta0: &Vector) -> f64 {
    (x * (beta - beta0)).norm_squared() / x.nrows() as f64
}

/// Realized prediction gap `(1/n)(||X(b_L - beta0)||^2 - ||X(b_R - beta0)||^2)`.
pub fn prediction_gap(x: &Matrix, beta0: &Vector, sol: &LassoSolution, refined: &RefinedEstimate) -> f64 {
    prediction_error(x, &sol.beta, beta0) - prediction_error(x, &refined.beta_r, beta0)
}

/// `(2/n) <X_E delta_E, eps>`, the stochastic part of the gap.
pub fn noise_interaction(x: &Matrix, refined: &RefinedEstimate, eps: &Vector) -> f64 {
    2.0 * (x * &refined.delta_hat).dot(eps) / x.nrows() as f64
}

/// `(1/n) ||X_E delta_E||^2`.
pub fn correction_energy(x: &Matrix, refined: &RefinedEstimate) -> f64 {
    (x * &refined.delta_hat).norm_squared() / x.nrows() as f64
}

/// `lambda_L^2 (2c + 1) / (c + 1)^2`, the lower bound on `H` when `lambda_R = c |E|`.
pub fn h_lower_bound(lambda_l: f64, c: f64) -> f64 {
    lambda_l * lambda_l * (2.0 * c + 1.0) / ((c + 1.0) * (c + 1.0))
}
