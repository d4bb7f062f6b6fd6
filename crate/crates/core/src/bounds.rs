//! Closed-form risk-dominance bounds and the scalar factors behind them.
//!
//! Everything here is a deterministic function of its arguments. Probability
//! and expectation inputs come from the caller (Monte Carlo estimates or
//! analytic proxies); nothing in this module samples.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Result};

/// `(x + 2a) / (x + a)^2`, decreasing in `x`.
pub fn factor_f1(x: f64, a: f64) -> f64 {
    (x + 2.0 * a) / ((x + a) * (x + a))
}

/// `x (2x + 1) / (x + 1)^2`, increasing with limit 2.
pub fn factor_f2(x: f64) -> f64 {
    x * (2.0 * x + 1.0) / ((x + 1.0) * (x + 1.0))
}

/// `x / (x + a)^2`, maximized at `x = a` with value `1 / (4a)`.
pub fn factor_f3(x: f64, a: f64) -> f64 {
    x / ((x + a) * (x + a))
}

/// `sqrt(x) (2x + 1) / (x + 1)^2`.
pub fn factor_f4(x: f64) -> f64 {
    x.sqrt() * (2.0 * x + 1.0) / ((x + 1.0) * (x + 1.0))
}

/// Stationary point of `f4`, the positive root of `2x^2 - 3x - 1`.
pub fn f4_argmax_exact() -> f64 {
    (3.0 + 17f64.sqrt()) / 4.0
}

/// Golden-section search for the maximizer of a unimodal function on `[lo, hi]`.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - inv_phi * (hi - lo);
    let mut b = lo + inv_phi * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + inv_phi * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - inv_phi * (hi - lo);
            fa = f(a);
        }
    }
    let x = 0.5 * (lo + hi);
    (x, f(x))
}

/// Numerically located `(argmax, max)` of `f4`.
pub fn f4_maximum() -> (f64, f64) {
    golden_section_max(factor_f4, 0.0, 10.0, 1e-12)
}

/// `c (2c + 1) / (2 (c + 1)^2)`, i.e. `f2(c) / 2`.
pub fn leading_factor(c: f64) -> f64 {
    factor_f2(c) / 2.0
}

fn require_c_above_two(c: f64) -> Result<()> {
    if !(c > 2.0) {
        return domain(format!("this bound requires c > 2, got c = {c}"));
    }
    Ok(())
}

fn check_probability(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return domain(format!("{name} must be a probability, got {v}"));
    }
    Ok(())
}

fn check_scale(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0 && v.is_finite()) {
        return domain(format!("{name} must be finite and >= 0, got {v}"));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lambda_l: f64,
    pub c: f64,
    pub n: usize,
    pub p: usize,
    pub sigma: f64,
    /// `P(E != {})`.
    pub p_nonempty: f64,
    /// Candidate containment set (bookkeeping only).
    #[serde(default)]
    pub t0: Vec<usize>,
    /// `E ||X_T0^T eps||_inf / n`.
    pub exp_max_t0: f64,
    /// `sqrt(E ||X^T eps||_inf^2) / n`.
    pub sqrt_second_moment: f64,
    /// `P(E not subset of T0)`.
    pub p_not_contained: f64,
    /// `P(E != S0)`.
    pub p_neq_s0: f64,
    /// `E ||X^T eps||_inf / n`; when absent the Gaussian-maxima bound stands in.
    #[serde(default)]
    pub exp_max_full: Option<f64>,
    /// Cluster count and tightness for the two-step bound.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub delta: Option<f64>,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l > 0.0) {
            return domain(format!("lambda_L must be positive, got {}", self.lambda_l));
        }
        if !(self.c > 0.0) {
            return domain(format!("c must be positive, got {}", self.c));
        }
        if self.n == 0 || self.p == 0 {
            return domain("n and p must be >= 1");
        }
        check_scale("sigma", self.sigma)?;
        check_scale("exp_max_t0", self.exp_max_t0)?;
        check_scale("sqrt_second_moment", self.sqrt_second_moment)?;
        if let Some(v) = self.exp_max_full {
            check_scale("exp_max_full", v)?;
        }
        check_probability("p_nonempty", self.p_nonempty)?;
        check_probability("p_not_contained", self.p_not_contained)?;
        check_probability("p_neq_s0", self.p_neq_s0)?;
        Ok(())
    }
}

/// Lower bound on DMSE for a given containment candidate `T0` (requires `c > 2`).
pub fn bound_containment(inputs: &BoundInputs) -> Result<f64> {
    require_c_above_two(inputs.c)?;
    inputs.validate()?;
    Ok(containment_value(
        inputs.lambda_l,
        inputs.c,
        inputs.p_nonempty,
        inputs.exp_max_t0,
        inputs.sqrt_second_moment,
        inputs.p_not_contained,
    ))
}

fn containment_value(lambda: f64, c: f64, p_nonempty: f64, exp_max_t0: f64, sqrt_m2: f64, p_out: f64) -> f64 {
    (2.0 * lambda / c) * (leading_factor(c) * lambda * p_nonempty - exp_max_t0 - sqrt_m2 * p_out.sqrt())
}

/// The full-set specialization, `T0 = {1..p}` (requires `c > 2`).
pub fn bound_full_set(lambda_l: f64, c: f64, p_nonempty: f64, exp_max_full: f64) -> Result<f64> {
    require_c_above_two(c)?;
    check_probability("p_nonempty", p_nonempty)?;
    check_scale("exp_max_full", exp_max_full)?;
    Ok(containment_value(lambda_l, c, p_nonempty, exp_max_full, 0.0, 0.0))
}

/// Lower bound on DMSE in terms of the exact-recovery failure probability.
pub fn bound_exact_recovery(
    lambda_l: f64,
    c: f64,
    sigma: f64,
    n: usize,
    p_nonempty: f64,
    p_neq_s0: f64,
) -> Result<f64> {
    if !(c > 0.0) {
        return domain(format!("c must be positive, got {c}"));
    }
    if n == 0 {
        return domain("n must be >= 1");
    }
    check_scale("sigma", sigma)?;
    check_probability("p_nonempty", p_nonempty)?;
    check_probability("p_neq_s0", p_neq_s0)?;
    let sc = c.sqrt();
    let lead = sc * (2.0 * c + 1.0) / ((c + 1.0) * (c + 1.0));
    let noise = sigma * (1.0 + 1.0 / (n as f64).sqrt()) * p_neq_s0.sqrt();
    Ok((lambda_l / sc) * (lead * lambda_l * p_nonempty - noise))
}

/// `sigma sqrt(2 log(2p) / n)`, the Gaussian-maxima bound on `E ||X^T eps||_inf / n`.
/// Also the universal tuning scale.
pub fn gaussian_max_bound(p: usize, n: usize, sigma: f64) -> f64 {
    sigma * (2.0 * (2.0 * p as f64).ln() / n as f64).sqrt()
}

/// `sigma^2 (2 log(4p) + 1) / n`, bounding `E ||X^T eps / n||_inf^2`.
pub fn second_moment_bound(p: usize, n: usize, sigma: f64) -> f64 {
    sigma * sigma * (2.0 * (4.0 * p as f64).ln() + 1.0) / n as f64
}

/// `(sigma / sqrt(n)) (sqrt(2 log(2K)) + delta sqrt(2 log(2p)))` for a
/// delta-tight clustering into `K` groups.
pub fn two_step_bound(k: usize, p: usize, n: usize, sigma: f64, delta: f64) -> Result<f64> {
    if k < 1 || k > p {
        return domain(format!("cluster count must satisfy 1 <= K <= p, got K={k}, p={p}"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("delta must be in (0, 1], got {delta}"));
    }
    if n == 0 {
        return domain("n must be >= 1");
    }
    check_scale("sigma", sigma)?;
    let lead = (2.0 * (2.0 * k as f64).ln()).sqrt();
    let tail = delta * (2.0 * (2.0 * p as f64).ln()).sqrt();
    Ok(sigma / (n as f64).sqrt() * (lead + tail))
}

/// `lambda_L` above which some finite `c` makes the full-set bound positive.
pub fn positivity_threshold(exp_max_full: f64, p_nonempty: f64) -> f64 {
    exp_max_full / p_nonempty
}

/// `lambda_L` above which the full-set bound is positive at this `c`.
pub fn positivity_threshold_at(c: f64, exp_max_full: f64, p_nonempty: f64) -> f64 {
    positivity_threshold(exp_max_full, p_nonempty) / leading_factor(c)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factors {
    /// `f1(1, c) = (2c + 1) / (c + 1)^2`, the per-unit-trace `H` floor.
    pub f1: f64,
    pub f2: f64,
    /// `f3(c, c) = 1 / (4c)`.
    pub f3: f64,
    pub f4: f64,
    pub leading: f64,
}

impl Factors {
    pub fn at(c: f64) -> Self {
        Factors {
            f1: factor_f1(1.0, c),
            f2: factor_f2(c),
            f3: factor_f3(c, c),
            f4: factor_f4(c),
            leading: leading_factor(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    /// `None` when `c <= 2`.
    pub containment_bound: Option<f64>,
    pub full_set_bound: Option<f64>,
    pub exact_recovery_bound: f64,
    pub factors: Factors,
    pub gaussian_max_bound: f64,
    pub second_moment_bound: f64,
    pub two_step_bound: Option<f64>,
    /// Full-set noise term used for the full-set bound.
    pub exp_max_full_used: f64,
    pub positivity_threshold: f64,
}

pub fn evaluate(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let BoundInputs { lambda_l, c, n, p, sigma, p_nonempty, p_neq_s0, .. } = *inputs;
    let gmax = gaussian_max_bound(p, n, sigma);
    let exp_full = inputs.exp_max_full.unwrap_or(gmax);
    let (containment, full_set) = if c > 2.0 {
        (Some(bound_containment(inputs)?), Some(bound_full_set(lambda_l, c, p_nonempty, exp_full)?))
    } else {
        (None, None)
    };
    let two_step = match (inputs.clusters, inputs.delta) {
        (Some(k), Some(d)) => Some(two_step_bound(k, p, n, sigma, d)?),
        _ => None,
    };
    Ok(BoundReport {
        inputs: inputs.clone(),
        containment_bound: containment,
        full_set_bound: full_set,
        exact_recovery_bound: bound_exact_recovery(lambda_l, c, sigma, n, p_nonempty, p_neq_s0)?,
        factors: Factors::at(c),
        gaussian_max_bound: gmax,
        second_moment_bound: second_moment_bound(p, n, sigma),
        two_step_bound: two_step,
        exp_max_full_used: exp_full,
        positivity_threshold: positivity_threshold(exp_full, p_nonempty),
    })
}
