//! Property suites run by `lrb verify`. Each suite checks one family of
//! identities or inequalities on seeded random instances.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{
    bound_containment, bound_full_set, f4_maximum, factor_f1, factor_f2, factor_f3, gaussian_max_bound, leading_factor,
    second_moment_bound, two_step_bound, BoundInputs,
};
use crate::designs::{
    generate_clustered_design, generate_design, generate_noise, net_size_bound, DesignKind, NoiseSpec, SignPattern,
    TrueModel,
};
use crate::error::{Error, Result};
use crate::experiments::estimate_noise_max;
use crate::lasso::{empty_set_probability_bound, sigma_beta0_inf, solve_lasso, LassoSettings, LassoSolution};
use crate::numerics::{proportion_and_se, sup_norm, Matrix, Vector};
use crate::refine::{
    correction_energy, h_definitional, h_lower_bound, noise_interaction, prediction_gap, refine, restricted_gram,
    RefinedEstimate,
};
use crate::rng::{derive_seed, rng_from_seed};

pub const SUITES: [&str; 8] =
    ["closed-form", "sign-alignment", "h-bound", "decomposition", "gaussian-max", "clustering", "empty-set", "factors"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VerifyOptions {
    /// Random certified instances per instance-based suite.
    pub instances: usize,
    /// Monte Carlo draws per estimate.
    pub mc_reps: usize,
    pub seed: u64,
    /// Flips the sign of one coordinate of every refinement correction.
    pub inject_fault: bool,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions { instances: 200, mc_reps: 2000, seed: 20_240_501, inject_fault: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub name: String,
    pub passed: bool,
    pub checks: usize,
    pub failures: usize,
    /// Worst observed value of the suite's key quantity, with its name.
    pub metrics: Vec<(String, f64)>,
    /// First few failure descriptions.
    pub notes: Vec<String>,
}

struct Tally {
    name: &'static str,
    checks: usize,
    failures: usize,
    notes: Vec<String>,
    metrics: Vec<(String, f64)>,
}

impl Tally {
    fn new(name: &'static str) -> Self {
        Tally { name, checks: 0, failures: 0, notes: Vec::new(), metrics: Vec::new() }
    }

    fn check(&mut self, ok: bool, note: impl FnOnce() -> String) {
        self.checks += 1;
        if !ok {
            self.failures += 1;
            if self.notes.len() < 5 {
                self.notes.push(note());
            }
        }
    }

    fn metric(&mut self, name: &str, value: f64) {
        self.metrics.push((name.to_string(), value));
    }

    fn finish(self) -> SuiteReport {
        SuiteReport {
            name: self.name.to_string(),
            passed: self.failures == 0 && self.checks > 0,
            checks: self.checks,
            failures: self.failures,
            metrics: self.metrics,
            notes: self.notes,
        }
    }
}

/// A certified Lasso fit on a random design, with the noise that produced it.
pub struct Instance {
    pub x: Matrix,
    pub y: Vector,
    pub eps: Vector,
    pub beta0: Vector,
    pub sol: LassoSolution,
}

/// Random instance with `n` in [20, 200] and `p` in [10, 500].
pub fn random_instance(seed: u64, index: u64) -> Result<Instance> {
    use rand::Rng;
    let mut rng = rng_from_seed(derive_seed(seed, "verify", "instance", index));
    let n = rng.random_range(20..=200);
    let p = rng.random_range(10..=500);
    let kind = match rng.random_range(0..3) {
        0 => DesignKind::IidGaussian,
        1 => DesignKind::Equicorrelated { rho: rng.random_range(0.0..0.6) },
        _ => DesignKind::Ar1 { rho: rng.random_range(-0.7..0.7) },
    };
    let design = generate_design(n, p, kind, rng.random())?;
    let k = rng.random_range(1..=5.min(p));
    let model = TrueModel::leading(p, k, rng.random_range(0.3..2.0), SignPattern::Alternating)?;
    let beta0 = model.beta0_vector();
    let sigma = rng.random_range(0.1..1.0);
    let eps = generate_noise(n, &NoiseSpec::Gaussian { sigma }, rng.random())?;
    let y = &design.x * &beta0 + &eps;
    let lambda = rng.random_range(0.5..3.0) * gaussian_max_bound(p, n, sigma);
    let sol = solve_lasso(&design.x, &y, lambda, &LassoSettings::default())?;
    Ok(Instance { x: design.x, y, eps, beta0, sol })
}

fn instances(opts: &VerifyOptions) -> Result<Vec<Instance>> {
    (0..opts.instances as u64).into_par_iter().map(|i| random_instance(opts.seed, i)).collect()
}

fn refine_checked(inst: &Instance, c: f64, opts: &VerifyOptions) -> Result<RefinedEstimate> {
    let mut r = refine(&inst.x, &inst.sol, c)?;
    if opts.inject_fault {
        if let Some(&j) = inst.sol.equi_set.first() {
            r.delta_hat[j] = -r.delta_hat[j];
            r.beta_r = &inst.sol.beta + &r.delta_hat;
        }
    }
    Ok(r)
}

/// Ridge correction by least squares on the augmented system
/// `[X_E / sqrt(n); sqrt(lambda_R) I] delta = [r / sqrt(n); 0]`.
pub fn ridge_direct(x: &Matrix, y: &Vector, sol: &LassoSolution, lambda_r: f64) -> Result<Vector> {
    let e = &sol.equi_set;
    let (n, k) = (x.nrows(), e.len());
    let scale = 1.0 / (n as f64).sqrt();
    let resid = y - x * &sol.beta;
    let mut a = Matrix::zeros(n + k, k);
    let mut b = Vector::zeros(n + k);
    for (col, &j) in e.iter().enumerate() {
        a.view_mut((0, col), (n, 1)).copy_from(&(x.column(j) * scale));
        a[(n + col, col)] = lambda_r.sqrt();
    }
    b.rows_mut(0, n).copy_from(&(resid * scale));
    let qr = a.qr();
    let qtb = qr.q().tr_mul(&b);
    qr.r().solve_upper_triangular(&qtb).ok_or_else(|| Error::Numeric("augmented ridge system is singular".into()))
}

fn non_empty<'a>(all: &'a [Instance], t: &mut Tally) -> Vec<&'a Instance> {
    let certified: Vec<&Instance> = all.iter().filter(|i| i.sol.certified).collect();
    t.check(certified.len() == all.len(), || {
        format!("{} of {} instances uncertified", all.len() - certified.len(), all.len())
    });
    certified.into_iter().filter(|i| !i.sol.is_empty()).collect()
}

fn suite_closed_form(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("closed-form");
    let all = instances(opts)?;
    let mut worst = 0.0f64;
    for inst in non_empty(&all, &mut t) {
        let r = refine_checked(inst, 3.0, opts)?;
        let closed = r.delta_on(&inst.sol.equi_set);
        let direct = ridge_direct(&inst.x, &inst.y, &inst.sol, r.lambda_r)?;
        let err = (&closed - &direct).norm() / (1.0 + closed.norm());
        worst = worst.max(err);
        t.check(err <= 1e-8, || format!("|E| = {}: relative gap {err:e}", closed.len()));
        let off_e = (0..r.delta_hat.len()).filter(|j| inst.sol.equi_set.binary_search(j).is_err());
        t.check(off_e.into_iter().all(|j| r.delta_hat[j] == 0.0), || "correction is non-zero outside E".into());
    }
    t.metric("max_relative_gap", worst);
    Ok(t.finish())
}

/// `sum_{k >= 1} (-Sigma_E / lambda_R)^k s`, summed until the terms vanish.
pub fn neumann_remainder(gram_e: &Matrix, s: &Vector, lambda_r: f64) -> Vector {
    let step = gram_e / (-lambda_r);
    let mut term = s.clone();
    let mut sum = Vector::zeros(s.len());
    for _ in 0..10_000 {
        term = &step * term;
        sum += &term;
        if sup_norm(&term) <= 1e-17 * sup_norm(&sum).max(1e-300) {
            break;
        }
    }
    sum
}

fn suite_sign_alignment(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("sign-alignment");
    let all = instances(opts)?;
    let mut worst_remainder = 0.0f64;
    let c = 3.0;
    for inst in non_empty(&all, &mut t) {
        let r = refine_checked(inst, c, opts)?;
        let d = r.delta_on(&inst.sol.equi_set);
        let s = inst.sol.signs_vector();
        let aligned = d.iter().zip(s.iter()).all(|(a, b)| a.signum() == *b && *a != 0.0);
        t.check(aligned, || format!("|E| = {}: sign(delta_E) != s", d.len()));
        let l1_identity = (r.l1_delta - d.dot(&s)).abs() <= 1e-12 * r.l1_delta.max(1e-300);
        t.check(l1_identity, || "||delta_E||_1 != <delta_E, s>".into());
        let gram_e = restricted_gram(&inst.x, &inst.sol.equi_set);
        let rem = neumann_remainder(&gram_e, &s, r.lambda_r);
        let rem_norm = sup_norm(&rem);
        worst_remainder = worst_remainder.max(rem_norm);
        t.check(rem_norm < 1.0, || format!("Neumann remainder {rem_norm}"));
        let series = (&s + &rem) * (inst.sol.lambda_l / r.lambda_r);
        let err = (&series - &d).norm() / d.norm();
        t.check(err <= 1e-9, || format!("Neumann series differs from delta_E by {err:e}"));
    }
    t.metric("max_neumann_remainder", worst_remainder);
    Ok(t.finish())
}

fn suite_h_bound(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("h-bound");
    let all = instances(opts)?;
    let mut min_ratio = f64::INFINITY;
    for inst in non_empty(&all, &mut t) {
        let lambda = inst.sol.lambda_l;
        let gram_e = restricted_gram(&inst.x, &inst.sol.equi_set);
        let s = inst.sol.signs_vector();
        for c in [2.1, 3.0, 5.0, 10.0] {
            let r = refine_checked(inst, c, opts)?;
            let d = r.delta_on(&inst.sol.equi_set);
            let floor = h_lower_bound(lambda, c);
            min_ratio = min_ratio.min(r.h_value / floor);
            t.check(r.h_value >= floor * (1.0 - 1e-12), || format!("c = {c}: H = {} below {floor}", r.h_value));
            let hdef = h_definitional(lambda, &s, &d, &gram_e);
            t.check((hdef - r.h_value).abs() <= 1e-9 * r.h_value.abs(), || {
                format!("c = {c}: eigen H {} vs definitional {hdef}", r.h_value)
            });
            let energy = correction_energy(&inst.x, &r);
            let cap = lambda * lambda / (4.0 * c);
            t.check(energy <= cap * (1.0 + 1e-12), || format!("c = {c}: energy {energy} above {cap}"));
            let l1 = d.iter().map(|v| v.abs()).sum::<f64>();
            t.check(l1 <= lambda / c * (1.0 + 1e-12), || format!("c = {c}: l1 {l1} above {}", lambda / c));
        }
    }
    t.metric("min_h_over_floor", min_ratio);
    Ok(t.finish())
}

fn suite_decomposition(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("decomposition");
    let all = instances(opts)?;
    let mut worst = 0.0f64;
    for inst in non_empty(&all, &mut t) {
        let r = refine_checked(inst, 3.0, opts)?;
        let gap = prediction_gap(&inst.x, &inst.beta0, &inst.sol, &r);
        let rhs = r.h_value - noise_interaction(&inst.x, &r, &inst.eps);
        let res = (gap - rhs).abs() / (1.0 + gap.abs());
        worst = worst.max(res);
        t.check(res <= 1e-9, || format!("gap {gap} vs H - noise term {rhs}"));
    }
    // noiseless fits: the gap is H itself
    for i in 0..opts.instances.min(50) as u64 {
        let inst = random_instance(opts.seed ^ 0x5eed, i)?;
        let mean = &inst.x * &inst.beta0;
        let sol = solve_lasso(&inst.x, &mean, inst.sol.lambda_l, &LassoSettings::default())?;
        if !sol.certified || sol.is_empty() {
            continue;
        }
        let quiet = Instance { y: mean, eps: Vector::zeros(inst.x.nrows()), sol, ..inst };
        let r = refine_checked(&quiet, 3.0, opts)?;
        let gap = prediction_gap(&quiet.x, &quiet.beta0, &quiet.sol, &r);
        let rel = (gap - r.h_value).abs() / r.h_value.abs();
        worst = worst.max(rel);
        t.check(rel <= 1e-9, || format!("noiseless gap {gap} vs H {}", r.h_value));
    }
    t.metric("max_relative_residual", worst);
    Ok(t.finish())
}

/// `(n, p)` pairs used by the Gaussian-maxima suite.
pub const GAUSSIAN_MAX_GRID: [(usize, usize); 3] = [(100, 50), (100, 500), (400, 2000)];

fn suite_gaussian_max(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("gaussian-max");
    let sigma = 1.0;
    for (i, &(n, p)) in GAUSSIAN_MAX_GRID.iter().enumerate() {
        let d =
            generate_design(n, p, DesignKind::IidGaussian, derive_seed(opts.seed, "verify", "gmax-design", i as u64))?;
        let all: Vec<usize> = (0..p).collect();
        let est = estimate_noise_max(
            &d.x,
            &all,
            &NoiseSpec::Gaussian { sigma },
            opts.mc_reps,
            derive_seed(opts.seed, "verify", "gmax", i as u64),
        )?;
        let b1 = gaussian_max_bound(p, n, sigma);
        let b2 = second_moment_bound(p, n, sigma);
        t.check(est.mean <= b1 + 3.0 * est.se, || format!("(n={n}, p={p}): mean max {} above {b1}", est.mean));
        t.check(est.sq_mean <= b2 + 3.0 * est.sq_se, || {
            format!("(n={n}, p={p}): second moment {} above {b2}", est.sq_mean)
        });
        t.metric(&format!("mean_over_bound_n{n}_p{p}"), est.mean / b1);
        t.metric(&format!("second_moment_over_bound_n{n}_p{p}"), est.sq_mean / b2);
    }
    Ok(t.finish())
}

fn suite_clustering(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("clustering");
    let (n, p, r, delta, k, sigma) = (100, 500, 3, 0.2, 8, 1.0);
    let d = generate_clustered_design(n, p, r, delta, Some(k), derive_seed(opts.seed, "verify", "cluster-design", 0))?;
    let kk = d.num_clusters().unwrap_or(0);
    t.check(kk as f64 <= net_size_bound(delta, r), || format!("K = {kk} exceeds the net bound"));
    let dist = d.max_cluster_distance().unwrap_or(f64::INFINITY) / (n as f64).sqrt();
    t.check(dist <= delta, || format!("cluster radius {dist} exceeds delta = {delta}"));
    t.check(d.max_norm_deviation() <= 1e-8, || "columns not normalized".into());
    let all: Vec<usize> = (0..p).collect();
    let est = estimate_noise_max(
        &d.x,
        &all,
        &NoiseSpec::Gaussian { sigma },
        opts.mc_reps,
        derive_seed(opts.seed, "verify", "cluster", 0),
    )?;
    let two = two_step_bound(kk, p, n, sigma, delta)?;
    let plain = gaussian_max_bound(p, n, sigma);
    t.check(est.mean <= two + 3.0 * est.se, || format!("mean max {} above two-step bound {two}", est.mean));
    t.check(two < plain, || format!("two-step bound {two} not below {plain}"));
    t.metric("mean_over_two_step", est.mean / two);
    t.metric("two_step_over_plain", two / plain);
    Ok(t.finish())
}

/// Margins `(lambda - ||Sigma beta0||_inf) / (sigma / sqrt(n))` of the empty-set regimes.
pub const EMPTY_SET_MARGINS: [f64; 3] = [-1.0, 0.0, 2.0];

/// Empirical `P(E = {})` and its bound for one margin.
pub fn empty_set_regime(margin: f64, reps: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let (n, p, sigma) = (100, 50, 1.0);
    let d = generate_design(n, p, DesignKind::IidGaussian, derive_seed(seed, "empty-set", "design", 0))?;
    let beta0 = TrueModel::leading(p, 1, 0.5, SignPattern::Positive)?.beta0_vector();
    let sb = sigma_beta0_inf(&d.x, &beta0);
    let lambda = sb + margin * sigma / (n as f64).sqrt();
    let mean = &d.x * &beta0;
    let gram = d.x.tr_mul(&d.x) / n as f64;
    let flags = (0..reps)
        .into_par_iter()
        .map(|r| {
            let eps =
                generate_noise(n, &NoiseSpec::Gaussian { sigma }, derive_seed(seed, "empty-set", "noise", r as u64))?;
            let sol =
                crate::lasso::solve_lasso_with_gram(&d.x, &gram, &(&mean + eps), lambda, &LassoSettings::default())?;
            Ok(sol.is_empty())
        })
        .collect::<Result<Vec<bool>>>()?;
    let (p_hat, se) = proportion_and_se(flags);
    Ok((p_hat, se, empty_set_probability_bound(sb, lambda, sigma, n)?))
}

fn suite_empty_set(opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("empty-set");
    for (i, &m) in EMPTY_SET_MARGINS.iter().enumerate() {
        let (p_hat, se, bound) =
            empty_set_regime(m, opts.mc_reps, derive_seed(opts.seed, "verify", "empty", i as u64))?;
        t.check(p_hat <= bound + 3.0 * se, || format!("margin {m}: P(E empty) = {p_hat} above {bound}"));
        t.metric(&format!("p_empty_margin_{m}"), p_hat);
        t.metric(&format!("bound_margin_{m}"), bound);
    }
    Ok(t.finish())
}

fn suite_factors(_opts: &VerifyOptions) -> Result<SuiteReport> {
    let mut t = Tally::new("factors");
    let (x, v) = f4_maximum();
    t.check((1.77..=1.79).contains(&x), || format!("f4 argmax {x}"));
    t.check((0.78..=0.80).contains(&v), || format!("f4 max {v}"));
    t.metric("f4_argmax", x);
    t.metric("f4_max", v);
    let grid: Vec<f64> = (0..4000).map(|i| i as f64 * 0.01).collect();
    t.check(grid.windows(2).all(|w| factor_f2(w[1]) > factor_f2(w[0])), || "f2 not increasing".into());
    t.check(factor_f2(1e6) > 2.0 - 1e-5 && factor_f2(1e6) < 2.0, || "f2 limit".into());
    t.check(factor_f2(1.0) == 0.75 && factor_f2(3.0) == 21.0 / 16.0, || "f2 values".into());
    for a in [0.5, 1.0, 4.0] {
        t.check(grid.iter().all(|&x| factor_f3(x, a) <= 1.0 / (4.0 * a) + 1e-15), || {
            format!("f3 above 1/(4a) at a = {a}")
        });
        t.check(grid.windows(2).all(|w| factor_f1(w[1], a) <= factor_f1(w[0], a)), || {
            format!("f1 not decreasing at a = {a}")
        });
    }
    t.check(leading_factor(3.0) == 0.65625, || "leading factor at c = 3".into());
    let inputs = BoundInputs {
        lambda_l: 0.3,
        c: 3.0,
        n: 100,
        p: 40,
        sigma: 1.0,
        p_nonempty: 0.9,
        t0: (0..40).collect(),
        exp_max_t0: 0.2,
        sqrt_second_moment: 0.25,
        p_not_contained: 0.0,
        p_neq_s0: 0.5,
        exp_max_full: Some(0.2),
        clusters: None,
        delta: None,
    };
    t.check(bound_containment(&inputs)? == bound_full_set(0.3, 3.0, 0.9, 0.2)?, || "full-set reduction".into());
    Ok(t.finish())
}

pub fn run_suite(name: &str, opts: &VerifyOptions) -> Result<SuiteReport> {
    match name {
        "closed-form" => suite_closed_form(opts),
        "sign-alignment" => suite_sign_alignment(opts),
        "h-bound" => suite_h_bound(opts),
        "decomposition" => suite_decomposition(opts),
        "gaussian-max" => suite_gaussian_max(opts),
        "clustering" => suite_clustering(opts),
        "empty-set" => suite_empty_set(opts),
        "factors" => suite_factors(opts),
        other => Err(Error::Domain(format!("unknown suite `{other}` (known: {})", SUITES.join(", ")))),
    }
}

/// Runs the named suites, or all of them when `only` is empty.
pub fn run_verify(only: &[String], opts: &VerifyOptions) -> Result<Vec<SuiteReport>> {
    if let Some(bad) = only.iter().find(|n| !SUITES.contains(&n.as_str())) {
        return Err(Error::Domain(format!("unknown suite `{bad}` (known: {})", SUITES.join(", "))));
    }
    SUITES.iter().filter(|s| only.is_empty() || only.iter().any(|o| o == *s)).map(|s| run_suite(s, opts)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> VerifyOptions {
        VerifyOptions { instances: 25, mc_reps: 300, ..VerifyOptions::default() }
    }

    #[test]
    fn every_suite_passes_on_a_small_budget() {
        for r in run_verify(&[], &quick()).unwrap() {
            assert!(r.passed, "{}: {:?}", r.name, r.notes);
        }
    }

    #[test]
    fn fault_injection_breaks_sign_alignment() {
        let opts = VerifyOptions { inject_fault: true, ..quick() };
        let r = run_suite("sign-alignment", &opts).unwrap();
        assert!(!r.passed);
        assert!(r.failures > 0);
    }

    #[test]
    fn filter_and_unknown_names() {
        let r = run_verify(&["factors".into()], &quick()).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].name, "factors");
        assert!(run_verify(&["nope".into()], &quick()).is_err());
    }

    #[test]
    fn direct_ridge_matches_scalar_case() {
        let x = Matrix::from_column_slice(4, 1, &[1.0, 1.0, 1.0, 1.0]);
        let y = Vector::from_column_slice(&[3.0, 3.0, 3.0, 3.0]);
        let sol = solve_lasso(&x, &y, 1.0, &LassoSettings::default()).unwrap();
        let d = ridge_direct(&x, &y, &sol, 2.0).unwrap();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-14);
    }
}
