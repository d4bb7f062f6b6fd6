//! Dense linear algebra and scalar kernels shared by the solver, the
//! refinement and the bound calculators.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{domain, Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Eigenvalues at or above this (negative) level are treated as rounding noise
/// on a PSD input and clamped to zero.
pub const EIGEN_CLAMP: f64 = 1e-12;

const SYMMETRY_TOL: f64 = 1e-12;

/// Spectral decomposition `A = P diag(mu) P^T` of a symmetric matrix.
#[derive(Debug, Clone)]
pub struct SymEig {
    /// Non-increasing.
    pub eigenvalues: Vec<f64>,
    /// Column `i` is the unit eigenvector for `eigenvalues[i]`.
    pub eigenvectors: Matrix,
}

impl SymEig {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// `P diag(mu) P^T`.
    pub fn reconstruct(&self) -> Matrix {
        let d = Matrix::from_diagonal(&Vector::from_column_slice(&self.eigenvalues));
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }

    /// `v^T P diag(g(mu)) P^T v` for a spectral weight `g`.
    pub fn quadratic_form(&self, v: &Vector, g: impl Fn(f64) -> f64) -> f64 {
        let rotated = self.eigenvectors.tr_mul(v);
        let terms: Vec<f64> = rotated.iter().zip(&self.eigenvalues).map(|(r, &mu)| r * r * g(mu)).collect();
        pairwise_sum(&terms)
    }
}

pub fn sym_eig(a: &Matrix) -> Result<SymEig> {
    let k = a.nrows();
    if k == 0 || a.ncols() != k {
        return domain(format!("sym_eig needs a non-empty square matrix, got {}x{}", k, a.ncols()));
    }
    let scale = a.amax().max(1.0);
    for i in 0..k {
        for j in (i + 1)..k {
            if (a[(i, j)] - a[(j, i)]).abs() > SYMMETRY_TOL * scale {
                return domain(format!("matrix is not symmetric at ({i}, {j})"));
            }
        }
    }
    let eig = SymmetricEigen::try_new(a.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numeric("symmetric eigensolver did not converge".into()))?;

    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let eigenvalues = order
        .iter()
        .map(|&i| {
            let mu = eig.eigenvalues[i];
            if (-EIGEN_CLAMP..0.0).contains(&mu) {
                0.0
            } else {
                mu
            }
        })
        .collect();
    let eigenvectors = Matrix::from_fn(k, k, |r, c| eig.eigenvectors[(r, order[c])]);
    Ok(SymEig { eigenvalues, eigenvectors })
}

/// `sign(z) * max(|z| - t, 0)`.
#[inline]
pub fn soft_threshold(z: f64, t: f64) -> f64 {
    debug_assert!(t >= 0.0);
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Maximum absolute row sum.
pub fn inf_norm(a: &Matrix) -> f64 {
    a.row_iter().map(|row| row.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Truncated Neumann series `sum_{j=0}^{terms} (-A)^j`, an approximation of
/// `(I + A)^{-1}` valid when `||A||_inf < 1`.
pub fn neumann_inverse(a: &Matrix, terms: usize) -> Result<Matrix> {
    if a.nrows() != a.ncols() {
        return domain("neumann_inverse needs a square matrix");
    }
    let norm = inf_norm(a);
    if norm >= 1.0 {
        return domain(format!("Neumann series needs ||A||_inf < 1, got {norm}"));
    }
    let k = a.nrows();
    let neg = -a;
    let mut power = Matrix::identity(k, k);
    let mut sum = power.clone();
    for _ in 0..terms {
        power = &power * &neg;
        sum += &power;
    }
    Ok(sum)
}

/// Solves `A x = b` for symmetric positive definite `A`.
pub fn cholesky_solve(a: &Matrix, b: &Vector) -> Result<Vector> {
    let chol = a.clone().cholesky().ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    Ok(chol.solve(b))
}

/// Numerical rank from the singular values, relative threshold `rtol * s_max`.
pub fn numerical_rank(a: &Matrix, rtol: f64) -> usize {
    if a.nrows() == 0 || a.ncols() == 0 {
        return 0;
    }
    let sv = a.singular_values();
    let smax = sv.max();
    sv.iter().filter(|&&s| s > rtol * smax).count()
}

/// Fixed-order pairwise summation. The result depends only on the input
/// order, never on how the values were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 8;
    if xs.len() <= BLOCK {
        return xs.iter().fold(0.0, |acc, &x| acc + x);
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Sample mean and its standard error (`sd / sqrt(m)`, unbiased variance).
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let m = xs.len();
    if m == 0 {
        return (f64::NAN, f64::NAN);
    }
    if xs.iter().all(|&x| x == xs[0]) {
        return (xs[0], 0.0);
    }
    let mean = pairwise_sum(xs) / m as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    let var = pairwise_sum(&sq) / (m - 1) as f64;
    (mean, (var / m as f64).sqrt())
}

/// Empirical proportion of `true` flags with its binomial standard error.
pub fn proportion_and_se(flags: impl IntoIterator<Item = bool>) -> (f64, f64) {
    let (hits, total) = flags.into_iter().fold((0usize, 0usize), |(h, t), f| (h + usize::from(f), t + 1));
    if total == 0 {
        return (f64::NAN, f64::NAN);
    }
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

pub fn sup_norm(v: &Vector) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Columns of `x` listed in `idx`, in that order.
pub fn select_columns(x: &Matrix, idx: &[usize]) -> Matrix {
    Matrix::from_fn(x.nrows(), idx.len(), |r, c| x[(r, idx[c])])
}
