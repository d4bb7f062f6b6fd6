//! Monte Carlo estimation of the prediction-risk gap between the Lasso and its
//! ridge refinement, together with the event probabilities and noise maxima
//! that the bounds consume.
//!
//! Replications are independent. Every random draw is seeded from
//! `(master_seed, scenario id, purpose, rep)`, results are collected in rep
//! order and reduced with fixed-order summation, so summaries do not depend on
//! the worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bounds::{bound_containment, bound_exact_recovery, bound_full_set, gaussian_max_bound, BoundInputs};
use crate::designs::{generate_design, generate_noise, DesignKind, DesignMatrix, NoiseSpec, SignPattern, TrueModel};
use crate::error::{Error, Result};
use crate::lasso::{
    empty_set_probability_bound, sigma_beta0_inf, solve_lasso, solve_lasso_with_gram, LassoSettings, LassoSolution,
};
use crate::numerics::{mean_and_se, pairwise_sum, proportion_and_se, sup_norm, Matrix, Vector};
use crate::refine::{noise_interaction, prediction_error, refine_with_gram, restricted_gram};
use crate::rng::derive_seed;

/// Largest tolerated share of non-certified replications.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;
/// Relative tolerance of the per-rep gap decomposition audit.
pub const AUDIT_TOL: f64 = 1e-9;
/// Monte Carlo slack, in standard errors.
pub const SE_SLACK: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub n: usize,
    pub p: usize,
    pub kind: DesignKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// `|S0|`; the support is the first `sparsity` columns unless `support` is given.
    #[serde(default)]
    pub sparsity: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support: Option<Vec<usize>>,
    pub magnitude: f64,
    #[serde(default)]
    pub sign_pattern: SignPattern,
}

impl ModelSpec {
    pub fn build(&self, p: usize) -> Result<TrueModel> {
        match &self.support {
            Some(s) => TrueModel::new(p, s, self.magnitude, self.sign_pattern),
            None => {
                if self.sparsity > p {
                    return Err(Error::Scenario(format!("sparsity {} exceeds p = {p}", self.sparsity)));
                }
                TrueModel::leading(p, self.sparsity, self.magnitude, self.sign_pattern)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum LambdaRule {
    Absolute {
        value: f64,
    },
    /// Multiple of `sigma sqrt(2 log(2p) / n)`.
    UniversalMultiple {
        multiple: f64,
    },
}

/// Candidate containment set for the containment bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum T0Spec {
    Support,
    Full,
    /// The support plus the `extra` off-support columns most correlated with it.
    PaddedSupport {
        extra: usize,
    },
    Explicit {
        indices: Vec<usize>,
    },
}

impl T0Spec {
    pub fn label(&self) -> String {
        match self {
            T0Spec::Support => "support".into(),
            T0Spec::Full => "full".into(),
            T0Spec::PaddedSupport { extra } => format!("padded_support+{extra}"),
            T0Spec::Explicit { indices } => format!("explicit[{}]", indices.len()),
        }
    }

    /// Sorted index set. Padding ranks off-support columns by their largest
    /// absolute correlation with a support column in `x` (index order without `x`).
    pub fn resolve(&self, p: usize, s0: &[usize], x: Option<&Matrix>) -> Result<Vec<usize>> {
        let set = match self {
            T0Spec::Support => s0.to_vec(),
            T0Spec::Full => (0..p).collect(),
            T0Spec::PaddedSupport { extra } => {
                let mut rest: Vec<(f64, usize)> = (0..p)
                    .filter(|j| s0.binary_search(j).is_err())
                    .map(|j| {
                        let corr = x.map_or(0.0, |x| {
                            s0.iter().fold(0.0f64, |m, &k| m.max(x.column(j).dot(&x.column(k)).abs()))
                        });
                        (corr, j)
                    })
                    .collect();
                rest.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
                let mut set = s0.to_vec();
                set.extend(rest.iter().take(*extra).map(|&(_, j)| j));
                set
            }
            T0Spec::Explicit { indices } => {
                if let Some(&j) = indices.iter().find(|&&j| j >= p) {
                    return Err(Error::Scenario(format!("T0 index {j} out of range for p = {p}")));
                }
                indices.clone()
            }
        };
        let mut set = set;
        set.sort_unstable();
        set.dedup();
        Ok(set)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignMode {
    /// One design for all reps; the estimand is the fixed-design risk gap.
    #[default]
    Fixed,
    /// A fresh design per rep; estimates a design-averaged gap.
    Redrawn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundKind {
    /// Full index set as containment candidate (needs `c > 2`).
    FullSet,
    /// Best of the configured containment candidates (needs `c > 2`).
    Containment,
    /// Exact support recovery, Gaussian noise only.
    ExactRecovery,
}

impl BoundKind {
    pub fn needs_c_above_two(self) -> bool {
        matches!(self, BoundKind::FullSet | BoundKind::Containment)
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::FullSet => "full_set",
            BoundKind::Containment => "containment",
            BoundKind::ExactRecovery => "exact_recovery",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub design: DesignSpec,
    pub model: ModelSpec,
    pub noise: NoiseSpec,
    pub lambda: LambdaRule,
    pub c_values: Vec<f64>,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub t0: Vec<T0Spec>,
    #[serde(default)]
    pub design_mode: DesignMode,
    /// Bounds to certify. Empty means every bound applicable at each `c`.
    #[serde(default)]
    pub bounds: Vec<BoundKind>,
    #[serde(default)]
    pub solver: LassoSettings,
}

impl Scenario {
    pub fn universal_rate(&self) -> f64 {
        gaussian_max_bound(self.design.p, self.design.n, self.noise.sigma())
    }

    pub fn lambda_l(&self) -> f64 {
        match self.lambda {
            LambdaRule::Absolute { value } => value,
            LambdaRule::UniversalMultiple { multiple } => multiple * self.universal_rate(),
        }
    }

    /// Containment candidates. The default is the support, the support padded
    /// with `max(|S0|, 1)` correlated columns, and the full set.
    pub fn t0_specs(&self) -> Vec<T0Spec> {
        if self.t0.is_empty() {
            let extra = self.model.support.as_ref().map_or(self.model.sparsity, Vec::len).max(1);
            vec![T0Spec::Support, T0Spec::PaddedSupport { extra }, T0Spec::Full]
        } else {
            self.t0.clone()
        }
    }

    pub fn bounds_at(&self, c: f64) -> Vec<BoundKind> {
        let all = [BoundKind::FullSet, BoundKind::Containment, BoundKind::ExactRecovery];
        if self.bounds.is_empty() {
            all.into_iter()
                .filter(|b| !b.needs_c_above_two() || c > 2.0)
                .filter(|b| *b != BoundKind::ExactRecovery || self.noise.is_gaussian())
                .collect()
        } else {
            all.into_iter().filter(|b| self.bounds.contains(b)).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Error::Scenario(format!("scenario `{}`: {msg}", self.id));
        let bad = |msg: String| Err(err(msg));
        if self.id.is_empty() || !self.id.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_' || ch == '-') {
            return bad("id must be a non-empty string of [A-Za-z0-9_-]".into());
        }
        let DesignSpec { n, p, kind } = self.design;
        if n < 2 || p < 1 {
            return bad(format!("design needs n >= 2 and p >= 1, got n={n}, p={p}"));
        }
        if kind == DesignKind::Orthonormal && p > n {
            return bad(format!("orthonormal design needs p <= n, got p={p}, n={n}"));
        }
        if self.replications < 1 {
            return bad("replications must be >= 1".into());
        }
        if self.c_values.is_empty() {
            return bad("c_values must be non-empty".into());
        }
        if let Some(c) = self.c_values.iter().find(|c| !(**c > 0.0 && c.is_finite())) {
            return bad(format!("c values must be positive and finite, got {c}"));
        }
        self.noise.validate().map_err(|e| err(e.to_string()))?;
        let model = self.model.build(p).map_err(|e| err(e.to_string()))?;
        let lambda = self.lambda_l();
        if !(lambda > 0.0 && lambda.is_finite()) {
            return bad(format!("lambda_L rule resolves to {lambda}, which is not positive"));
        }
        for b in &self.bounds {
            if b.needs_c_above_two() {
                if let Some(c) = self.c_values.iter().find(|c| **c <= 2.0) {
                    return bad(format!("the {} bound requires c > 2, got c = {c}", b.name()));
                }
            }
            if *b == BoundKind::ExactRecovery && !self.noise.is_gaussian() {
                return bad("the exact_recovery bound requires Gaussian noise".into());
            }
        }
        for t in self.t0_specs() {
            t.resolve(p, &model.support, None).map_err(|e| err(e.to_string()))?;
        }
        Ok(())
    }
}

/// Flags for one Lasso solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEvents {
    pub empty: bool,
    /// `E subset of T0` per candidate.
    pub contained: Vec<bool>,
    pub eq_s0: bool,
}

/// `s0` and each `t0` must be sorted.
pub fn support_events(sol: &LassoSolution, s0: &[usize], t0_list: &[Vec<usize>]) -> SupportEvents {
    let e = &sol.equi_set;
    SupportEvents {
        empty: e.is_empty(),
        contained: t0_list.iter().map(|t| e.iter().all(|j| t.binary_search(j).is_ok())).collect(),
        eq_s0: e.as_slice() == s0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CRecord {
    pub c: f64,
    pub lambda_r: f64,
    pub h: f64,
    pub delta_gap: f64,
    pub pred_err_lasso: f64,
    pub pred_err_refined: f64,
    /// `(2/n) <X_E delta_E, eps>`.
    pub noise_term: f64,
    /// `|gap - (H - noise_term)| / (1 + |gap|)`.
    pub audit_residual: f64,
    pub l1_delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub certified: bool,
    pub e_size: usize,
    pub events: SupportEvents,
    /// `||X^T eps||_inf / n`.
    pub noise_max_full: f64,
    /// `||X_T^T eps||_inf / n` per containment candidate.
    pub noise_max_t0: Vec<f64>,
    pub per_c: Vec<CRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

impl MeanSe {
    fn of(xs: &[f64]) -> Self {
        let (mean, se) = mean_and_se(xs);
        MeanSe { mean, se }
    }

    fn of_flags(flags: impl IntoIterator<Item = bool>) -> Self {
        let (mean, se) = proportion_and_se(flags);
        MeanSe { mean, se }
    }
}

/// Event probabilities and noise maxima shared by all `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventSummary {
    pub p_nonempty_hat: MeanSe,
    pub p_empty_hat: MeanSe,
    pub p_eq_s0_hat: MeanSe,
    pub t0_labels: Vec<String>,
    pub t0_sizes: Vec<usize>,
    pub p_contain_hat: Vec<MeanSe>,
    pub exp_max_hats: Vec<MeanSe>,
    pub exp_max_full_hat: MeanSe,
    /// `E ||X^T eps / n||_inf^2`.
    pub second_moment_hat: MeanSe,
    pub mean_e_size: f64,
    /// `exp_max_full_hat / p_nonempty_hat`; `None` if `E` was always empty.
    pub positivity_threshold: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DmseSummary {
    pub c: f64,
    pub dmse_hat: f64,
    pub se: f64,
    pub ci95: [f64; 2],
    pub mean_h: f64,
    pub mean_noise_term: f64,
    pub h_floor: f64,
    pub max_audit_residual: f64,
    pub audit_failures: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictKind {
    Pass,
    Vacuous,
    Fail,
}

impl std::fmt::Display for VerdictKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            VerdictKind::Pass => "PASS",
            VerdictKind::Vacuous => "VACUOUS",
            VerdictKind::Fail => "FAIL",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// `None` for checks that do not depend on `c`.
    pub c: Option<f64>,
    /// Bound name, or `decomposition` / `empty_set` for the audits.
    pub check: String,
    pub bound: f64,
    pub estimate: f64,
    pub se: f64,
    /// `estimate - bound` for lower bounds, `bound - estimate` for upper bounds.
    pub margin: f64,
    pub verdict: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Verdict for `estimate >= bound` with `SE_SLACK` standard errors of slack.
pub fn lower_bound_verdict(estimate: f64, se: f64, bound: f64) -> VerdictKind {
    if estimate < bound - SE_SLACK * se {
        VerdictKind::Fail
    } else if bound <= 0.0 {
        VerdictKind::Vacuous
    } else {
        VerdictKind::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignInfo {
    pub kind: String,
    pub n: usize,
    pub p: usize,
    pub mode: DesignMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_cluster_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub scenario_id: String,
    pub master_seed: u64,
    pub design: DesignInfo,
    pub lambda_l: f64,
    pub universal_rate: f64,
    pub replications: usize,
    pub certified_reps: usize,
    pub excluded_reps: usize,
    pub events: EventSummary,
    /// `Phi((lambda - ||Sigma beta0||_inf) / (sigma / sqrt(n)))`, fixed Gaussian designs with `sigma > 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empty_set_bound: Option<f64>,
    pub per_c: Vec<DmseSummary>,
    pub verdicts: Vec<Verdict>,
}

impl ScenarioSummary {
    pub fn any_fail(&self) -> bool {
        self.verdicts.iter().any(|v| v.verdict == VerdictKind::Fail)
    }

    pub fn dmse_at(&self, c: f64) -> Option<&DmseSummary> {
        self.per_c.iter().find(|d| d.c == c)
    }

    pub fn verdict(&self, c: f64, check: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.c == Some(c) && v.check == check)
    }
}

/// Monte Carlo estimate of `||X_T^T eps||_inf / n` and of its square.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseMaxEstimate {
    pub mean: f64,
    pub se: f64,
    pub sq_mean: f64,
    pub sq_se: f64,
    pub reps: usize,
}

pub fn estimate_noise_max(
    x: &Matrix,
    t: &[usize],
    spec: &NoiseSpec,
    reps: usize,
    seed: u64,
) -> Result<NoiseMaxEstimate> {
    if t.is_empty() {
        return Err(Error::Domain("index set T must be non-empty".into()));
    }
    if reps < 100 {
        return Err(Error::Domain(format!("noise-max estimation needs at least 100 reps, got {reps}")));
    }
    if let Some(&j) = t.iter().find(|&&j| j >= x.ncols()) {
        return Err(Error::Domain(format!("index {j} out of range for p = {}", x.ncols())));
    }
    spec.validate()?;
    let xt = crate::numerics::select_columns(x, t);
    let n = x.nrows();
    let maxima = (0..reps)
        .into_par_iter()
        .map(|r| {
            let eps = generate_noise(n, spec, derive_seed(seed, "noise-max", "eps", r as u64))?;
            Ok(sup_norm(&xt.tr_mul(&eps)) / n as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    let squares: Vec<f64> = maxima.iter().map(|m| m * m).collect();
    let (mean, se) = mean_and_se(&maxima);
    let (sq_mean, sq_se) = mean_and_se(&squares);
    Ok(NoiseMaxEstimate { mean, se, sq_mean, sq_se, reps })
}

struct Prepared {
    model: TrueModel,
    beta0: Vector,
    t0_sets: Vec<Vec<usize>>,
    lambda: f64,
    fixed: Option<FixedDesign>,
}

struct FixedDesign {
    design: DesignMatrix,
    gram: Option<Matrix>,
    mean: Vector,
}

fn fixed_design(s: &Scenario, index: u64, beta0: &Vector) -> Result<FixedDesign> {
    let seed = derive_seed(s.master_seed, &s.id, "design", index);
    let design = generate_design(s.design.n, s.design.p, s.design.kind, seed)?;
    let n = design.n() as f64;
    let gram = (design.p() <= crate::lasso::GRAM_CACHE_MAX_P).then(|| design.x.tr_mul(&design.x) / n);
    let mean = &design.x * beta0;
    Ok(FixedDesign { design, gram, mean })
}

fn prepare(s: &Scenario) -> Result<Prepared> {
    s.validate()?;
    let model = s.model.build(s.design.p)?;
    let beta0 = model.beta0_vector();
    let first = fixed_design(s, 0, &beta0)?;
    let t0_sets = s
        .t0_specs()
        .iter()
        .map(|t| t.resolve(s.design.p, &model.support, Some(&first.design.x)))
        .collect::<Result<Vec<_>>>()?;
    let fixed = match s.design_mode {
        DesignMode::Fixed => Some(first),
        DesignMode::Redrawn => None,
    };
    Ok(Prepared { model, beta0, t0_sets, lambda: s.lambda_l(), fixed })
}

fn run_rep(s: &Scenario, prep: &Prepared, rep: usize) -> Result<RepRecord> {
    let owned;
    let fd = match &prep.fixed {
        Some(fd) => fd,
        None => {
            owned = fixed_design(s, rep as u64 + 1, &prep.beta0)?;
            &owned
        }
    };
    let x = &fd.design.x;
    let n = x.nrows() as f64;
    let eps = generate_noise(x.nrows(), &s.noise, derive_seed(s.master_seed, &s.id, "noise", rep as u64))?;
    let y = &fd.mean + &eps;

    let score = x.tr_mul(&eps) / n;
    let noise_max_full = sup_norm(&score);
    let noise_max_t0 = prep.t0_sets.iter().map(|t| t.iter().fold(0.0f64, |m, &j| m.max(score[j].abs()))).collect();

    let sol = match &fd.gram {
        Some(g) => solve_lasso_with_gram(x, g, &y, prep.lambda, &s.solver)?,
        None => solve_lasso(x, &y, prep.lambda, &s.solver)?,
    };
    let events = support_events(&sol, &prep.model.support, &prep.t0_sets);
    let mut per_c = Vec::new();
    if sol.certified {
        let gram_e = match &fd.gram {
            Some(g) => g.select_rows(&sol.equi_set).select_columns(&sol.equi_set),
            None => restricted_gram(x, &sol.equi_set),
        };
        let pred_err_lasso = prediction_error(x, &sol.beta, &prep.beta0);
        for &c in &s.c_values {
            let refined = refine_with_gram(&gram_e, &sol, c)?;
            let pred_err_refined = prediction_error(x, &refined.beta_r, &prep.beta0);
            let delta_gap = pred_err_lasso - pred_err_refined;
            let noise_term = noise_interaction(x, &refined, &eps);
            let audit_residual = (delta_gap - (refined.h_value - noise_term)).abs() / (1.0 + delta_gap.abs());
            per_c.push(CRecord {
                c,
                lambda_r: refined.lambda_r,
                h: refined.h_value,
                delta_gap,
                pred_err_lasso,
                pred_err_refined,
                noise_term,
                audit_residual,
                l1_delta: refined.l1_delta,
            });
        }
    }
    Ok(RepRecord {
        rep,
        certified: sol.certified,
        e_size: sol.equi_set.len(),
        events,
        noise_max_full,
        noise_max_t0,
        per_c,
    })
}

/// Runs every replication and aggregates. Uses the current rayon pool.
pub fn run_scenario(s: &Scenario) -> Result<(ScenarioSummary, Vec<RepRecord>)> {
    let prep = prepare(s)?;
    let records = (0..s.replications).into_par_iter().map(|rep| run_rep(s, &prep, rep)).collect::<Result<Vec<_>>>()?;
    let summary = summarize(s, &prep, &records)?;
    Ok((summary, records))
}

fn summarize(s: &Scenario, prep: &Prepared, records: &[RepRecord]) -> Result<ScenarioSummary> {
    let certified: Vec<&RepRecord> = records.iter().filter(|r| r.certified).collect();
    let excluded = records.len() - certified.len();
    if certified.is_empty() {
        return Err(Error::Scenario(format!("scenario `{}`: no replication produced a certified Lasso solve", s.id)));
    }
    if excluded as f64 > MAX_EXCLUDED_FRACTION * records.len() as f64 {
        return Err(Error::Scenario(format!(
            "scenario `{}`: {excluded} of {} replications failed certification (limit {}%)",
            s.id,
            records.len(),
            MAX_EXCLUDED_FRACTION * 100.0
        )));
    }

    let maxima: Vec<f64> = records.iter().map(|r| r.noise_max_full).collect();
    let squares: Vec<f64> = maxima.iter().map(|m| m * m).collect();
    let p_nonempty_hat = MeanSe::of_flags(certified.iter().map(|r| !r.events.empty));
    let exp_max_full_hat = MeanSe::of(&maxima);
    let specs = s.t0_specs();
    let events = EventSummary {
        p_empty_hat: MeanSe::of_flags(certified.iter().map(|r| r.events.empty)),
        p_eq_s0_hat: MeanSe::of_flags(certified.iter().map(|r| r.events.eq_s0)),
        t0_labels: specs.iter().map(T0Spec::label).collect(),
        t0_sizes: prep.t0_sets.iter().map(Vec::len).collect(),
        p_contain_hat: (0..prep.t0_sets.len())
            .map(|k| MeanSe::of_flags(certified.iter().map(|r| r.events.contained[k])))
            .collect(),
        exp_max_hats: (0..prep.t0_sets.len())
            .map(|k| MeanSe::of(&records.iter().map(|r| r.noise_max_t0[k]).collect::<Vec<_>>()))
            .collect(),
        second_moment_hat: MeanSe::of(&squares),
        mean_e_size: pairwise_sum(&certified.iter().map(|r| r.e_size as f64).collect::<Vec<_>>())
            / certified.len() as f64,
        positivity_threshold: (p_nonempty_hat.mean > 0.0).then(|| exp_max_full_hat.mean / p_nonempty_hat.mean),
        p_nonempty_hat,
        exp_max_full_hat,
    };

    let lambda = prep.lambda;
    let per_c: Vec<DmseSummary> = s
        .c_values
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let rows: Vec<&CRecord> = certified.iter().map(|r| &r.per_c[i]).collect();
            let gaps: Vec<f64> = rows.iter().map(|r| r.delta_gap).collect();
            let (dmse_hat, se) = mean_and_se(&gaps);
            let m = rows.len() as f64;
            DmseSummary {
                c,
                dmse_hat,
                se,
                ci95: [dmse_hat - 1.96 * se, dmse_hat + 1.96 * se],
                mean_h: pairwise_sum(&rows.iter().map(|r| r.h).collect::<Vec<_>>()) / m,
                mean_noise_term: pairwise_sum(&rows.iter().map(|r| r.noise_term).collect::<Vec<_>>()) / m,
                h_floor: crate::refine::h_lower_bound(lambda, c),
                max_audit_residual: rows.iter().fold(0.0f64, |a, r| a.max(r.audit_residual)),
                audit_failures: rows.iter().filter(|r| !(r.audit_residual <= AUDIT_TOL)).count(),
            }
        })
        .collect();

    let sigma = s.noise.sigma();
    let empty_set_bound = match &prep.fixed {
        Some(fd) if s.noise.is_gaussian() && sigma > 0.0 => {
            Some(empty_set_probability_bound(sigma_beta0_inf(&fd.design.x, &prep.beta0), lambda, sigma, s.design.n)?)
        }
        _ => None,
    };
    let design = match &prep.fixed {
        Some(fd) => DesignInfo {
            kind: fd.design.kind.to_string(),
            n: fd.design.n(),
            p: fd.design.p(),
            mode: s.design_mode,
            clusters: fd.design.num_clusters(),
            max_cluster_distance: fd.design.max_cluster_distance(),
        },
        None => DesignInfo {
            kind: s.design.kind.to_string(),
            n: s.design.n,
            p: s.design.p,
            mode: s.design_mode,
            clusters: None,
            max_cluster_distance: None,
        },
    };
    let mut summary = ScenarioSummary {
        scenario_id: s.id.clone(),
        master_seed: s.master_seed,
        design,
        lambda_l: lambda,
        universal_rate: s.universal_rate(),
        replications: records.len(),
        certified_reps: certified.len(),
        excluded_reps: excluded,
        events,
        empty_set_bound,
        per_c,
        verdicts: Vec::new(),
    };
    summary.verdicts = compare_bounds(&summary, s)?;
    Ok(summary)
}

/// Bound value for one `(c, bound)` pair from the summary's plug-in estimates.
/// For the containment bound the best candidate and its label are returned.
pub fn bound_value(summary: &ScenarioSummary, s: &Scenario, c: f64, kind: BoundKind) -> Result<(f64, Option<String>)> {
    let ev = &summary.events;
    let lambda = summary.lambda_l;
    match kind {
        BoundKind::FullSet => Ok((bound_full_set(lambda, c, ev.p_nonempty_hat.mean, ev.exp_max_full_hat.mean)?, None)),
        BoundKind::Containment => {
            let mut best: Option<(f64, String)> = None;
            for (k, label) in ev.t0_labels.iter().enumerate() {
                let inputs = BoundInputs {
                    lambda_l: lambda,
                    c,
                    n: s.design.n,
                    p: s.design.p,
                    sigma: s.noise.sigma(),
                    p_nonempty: ev.p_nonempty_hat.mean,
                    t0: Vec::new(),
                    exp_max_t0: ev.exp_max_hats[k].mean,
                    sqrt_second_moment: ev.second_moment_hat.mean.sqrt(),
                    p_not_contained: (1.0 - ev.p_contain_hat[k].mean).max(0.0),
                    p_neq_s0: (1.0 - ev.p_eq_s0_hat.mean).max(0.0),
                    exp_max_full: Some(ev.exp_max_full_hat.mean),
                    clusters: None,
                    delta: None,
                };
                let v = bound_containment(&inputs)?;
                if best.as_ref().is_none_or(|(b, _)| v > *b) {
                    best = Some((v, label.clone()));
                }
            }
            let (v, label) = best.ok_or_else(|| Error::Scenario("no containment candidates".into()))?;
            Ok((v, Some(format!("T0={label}"))))
        }
        BoundKind::ExactRecovery => Ok((
            bound_exact_recovery(
                lambda,
                c,
                s.noise.sigma(),
                s.design.n,
                ev.p_nonempty_hat.mean,
                (1.0 - ev.p_eq_s0_hat.mean).max(0.0),
            )?,
            None,
        )),
    }
}

/// PASS / VACUOUS / FAIL for every `(c, bound)` pair plus the decomposition
/// and empty-set audits.
pub fn compare_bounds(summary: &ScenarioSummary, s: &Scenario) -> Result<Vec<Verdict>> {
    let mut out = Vec::new();
    for d in &summary.per_c {
        for kind in s.bounds_at(d.c) {
            let (bound, detail) = bound_value(summary, s, d.c, kind)?;
            out.push(Verdict {
                c: Some(d.c),
                check: kind.name().into(),
                bound,
                estimate: d.dmse_hat,
                se: d.se,
                margin: d.dmse_hat - bound,
                verdict: lower_bound_verdict(d.dmse_hat, d.se, bound),
                detail,
            });
        }
        out.push(Verdict {
            c: Some(d.c),
            check: "decomposition".into(),
            bound: AUDIT_TOL,
            estimate: d.max_audit_residual,
            se: 0.0,
            margin: AUDIT_TOL - d.max_audit_residual,
            verdict: if d.audit_failures == 0 { VerdictKind::Pass } else { VerdictKind::Fail },
            detail: (d.audit_failures > 0).then(|| format!("{} reps out of tolerance", d.audit_failures)),
        });
    }
    if let Some(bound) = summary.empty_set_bound {
        let est = &summary.events.p_empty_hat;
        // binomial se at the bound keeps the test meaningful when every rep agrees
        let null_se = (bound * (1.0 - bound) / summary.certified_reps as f64).sqrt();
        let se = est.se.max(null_se);
        let fail = est.mean > bound + SE_SLACK * se;
        out.push(Verdict {
            c: None,
            check: "empty_set".into(),
            bound,
            estimate: est.mean,
            se,
            margin: bound - est.mean,
            verdict: if fail { VerdictKind::Fail } else { VerdictKind::Pass },
            detail: None,
        });
    }
    Ok(out)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Streams per-rep, per-`c` rows for certified reps.
pub fn write_records_csv<W: Write>(w: W, scenario_id: &str, lambda_l: f64, records: &[RepRecord]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let t0_count = records.first().map_or(0, |r| r.events.contained.len());
    let mut header: Vec<String> = [
        "scenario_id",
        "rep",
        "c",
        "lambda_L",
        "E_size",
        "H",
        "delta_gap",
        "pred_err_lasso",
        "pred_err_refined",
        "E_empty",
        "E_eq_S0",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..t0_count).map(|k| format!("E_in_T0_{k}")));
    wr.write_record(&header)?;
    for r in records {
        for row in &r.per_c {
            let mut fields = vec![
                scenario_id.to_string(),
                r.rep.to_string(),
                fmt_f64(row.c),
                fmt_f64(lambda_l),
                r.e_size.to_string(),
                fmt_f64(row.h),
                fmt_f64(row.delta_gap),
                fmt_f64(row.pred_err_lasso),
                fmt_f64(row.pred_err_refined),
                u8::from(r.events.empty).to_string(),
                u8::from(r.events.eq_s0).to_string(),
            ];
            fields.extend(r.events.contained.iter().map(|&b| u8::from(b).to_string()));
            wr.write_record(&fields)?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// One cell of a `(lambda_L, c)` sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda_multiple: f64,
    pub lambda_l: f64,
    pub c: f64,
    pub dmse_hat: f64,
    pub se: f64,
    /// `full_set` when `c > 2`, else `exact_recovery` under Gaussian noise.
    pub bound_kind: Option<String>,
    pub bound: Option<f64>,
    pub verdict: Option<VerdictKind>,
    pub p_nonempty_hat: f64,
    pub positivity_threshold: Option<f64>,
    /// The grid point sits at the universal tuning rate.
    pub universal: bool,
}

/// Reruns `base` for each multiple of the universal rate with `c_grid` as the
/// refinement multipliers. Seeds are unchanged across grid points.
pub fn run_sweep(base: &Scenario, multiples: &[f64], c_grid: &[f64]) -> Result<Vec<SweepRow>> {
    if multiples.is_empty() || c_grid.is_empty() {
        return Err(Error::Scenario("sweep grid must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &m in multiples {
        let mut s = base.clone();
        s.lambda = LambdaRule::UniversalMultiple { multiple: m };
        s.c_values = c_grid.to_vec();
        s.bounds.clear();
        let (summary, _) = run_scenario(&s)?;
        for d in &summary.per_c {
            let kind = if d.c > 2.0 {
                Some(BoundKind::FullSet)
            } else if s.noise.is_gaussian() {
                Some(BoundKind::ExactRecovery)
            } else {
                None
            };
            let bound = kind.map(|k| bound_value(&summary, &s, d.c, k).map(|b| b.0)).transpose()?;
            rows.push(SweepRow {
                lambda_multiple: m,
                lambda_l: summary.lambda_l,
                c: d.c,
                dmse_hat: d.dmse_hat,
                se: d.se,
                bound_kind: kind.map(|k| k.name().to_string()),
                bound,
                verdict: bound.map(|b| lower_bound_verdict(d.dmse_hat, d.se, b)),
                p_nonempty_hat: summary.events.p_nonempty_hat.mean,
                positivity_threshold: summary.events.positivity_threshold,
                universal: m == 1.0,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(id: &str, sigma: f64, magnitude: f64, reps: usize) -> Scenario {
        Scenario {
            id: id.into(),
            description: None,
            design: DesignSpec { n: 40, p: 25, kind: DesignKind::IidGaussian },
            model: ModelSpec { sparsity: 3, support: None, magnitude, sign_pattern: SignPattern::Alternating },
            noise: NoiseSpec::Gaussian { sigma },
            lambda: LambdaRule::Absolute { value: 0.1 },
            c_values: vec![3.0, 1.5],
            replications: reps,
            master_seed: 11,
            t0: vec![],
            design_mode: DesignMode::Fixed,
            bounds: vec![],
            solver: LassoSettings::default(),
        }
    }

    #[test]
    fn null_model_without_noise_is_exactly_zero() {
        let s = small("null", 0.0, 0.0, 20);
        let (sum, recs) = run_scenario(&s).unwrap();
        assert!(recs.iter().all(|r| r.events.empty && r.events.eq_s0));
        for d in &sum.per_c {
            assert_eq!(d.dmse_hat, 0.0);
            assert_eq!(d.se, 0.0);
        }
        assert_eq!(sum.events.p_nonempty_hat.mean, 0.0);
        assert!(sum.events.positivity_threshold.is_none());
    }

    #[test]
    fn noiseless_signal_gives_deterministic_h() {
        let s = small("noiseless", 0.0, 1.0, 8);
        let (sum, recs) = run_scenario(&s).unwrap();
        for (i, d) in sum.per_c.iter().enumerate() {
            let first = recs[0].per_c[i].delta_gap;
            assert!(recs.iter().all(|r| r.per_c[i].delta_gap == first));
            assert_eq!(d.se, 0.0);
            assert!(d.dmse_hat >= d.h_floor);
            assert!((d.dmse_hat - d.mean_h).abs() <= 1e-9 * d.mean_h);
        }
        let v = sum.verdict(3.0, "full_set").unwrap();
        assert_eq!(v.verdict, VerdictKind::Pass);
        assert!(v.margin >= 0.0);
        assert!(sum.verdict(1.5, "full_set").is_none());
        assert_eq!(sum.verdict(1.5, "exact_recovery").unwrap().verdict, VerdictKind::Pass);
    }

    #[test]
    fn decomposition_audit_holds_with_noise() {
        let s = small("audit", 0.5, 1.0, 30);
        let (sum, _) = run_scenario(&s).unwrap();
        for d in &sum.per_c {
            assert_eq!(d.audit_failures, 0, "{}", d.max_audit_residual);
        }
        assert!(!sum.any_fail());
    }

    #[test]
    fn summaries_do_not_depend_on_thread_count() {
        let s = small("threads", 0.5, 1.0, 40);
        let run = |threads| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            let (sum, _) = pool.install(|| run_scenario(&s)).unwrap();
            serde_json::to_string(&sum).unwrap()
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn redrawn_designs_differ_per_rep() {
        let mut s = small("redrawn", 0.5, 1.0, 10);
        s.design_mode = DesignMode::Redrawn;
        let (sum, recs) = run_scenario(&s).unwrap();
        assert_eq!(sum.design.mode, DesignMode::Redrawn);
        assert!(sum.empty_set_bound.is_none());
        let h: Vec<f64> = recs.iter().map(|r| r.per_c[0].h).collect();
        assert!(h.windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn validation_rules() {
        let mut s = small("v", 0.5, 1.0, 10);
        s.bounds = vec![BoundKind::Containment];
        s.c_values = vec![2.0];
        let err = s.validate().unwrap_err().to_string();
        assert!(err.contains("c > 2"), "{err}");
        let mut s = small("v", 0.0, 1.0, 10);
        s.lambda = LambdaRule::UniversalMultiple { multiple: 2.0 };
        assert!(s.validate().is_err());
        let mut s = small("v", 0.5, 1.0, 0);
        assert!(s.validate().is_err());
        s.replications = 1;
        s.noise = NoiseSpec::Rademacher { sigma: 0.5 };
        s.bounds = vec![BoundKind::ExactRecovery];
        assert!(s.validate().is_err());
        let mut s = small("bad id", 0.5, 1.0, 1);
        assert!(s.validate().is_err());
        s.id = "ok".into();
        s.t0 = vec![T0Spec::Explicit { indices: vec![99] }];
        assert!(s.validate().is_err());
    }

    #[test]
    fn support_event_logic() {
        let sol = |e: Vec<usize>| LassoSolution {
            beta: Vector::zeros(6),
            signs: vec![1.0; e.len()],
            equi_set: e,
            lambda_l: 1.0,
            kkt_residual: 0.0,
            duality_gap: 0.0,
            primal: 0.0,
            certified: true,
            sweeps: 1,
        };
        let t0 = vec![vec![0, 1], vec![0, 1, 2, 3, 4, 5]];
        let ev = support_events(&sol(vec![]), &[0, 1], &t0);
        assert!(ev.empty && ev.contained.iter().all(|&b| b) && !ev.eq_s0);
        assert!(support_events(&sol(vec![]), &[], &t0).eq_s0);
        let ev = support_events(&sol(vec![0, 1]), &[0, 1], &t0);
        assert!(ev.eq_s0 && ev.contained == vec![true, true]);
        let ev = support_events(&sol(vec![1, 4]), &[0, 1], &t0);
        assert!(!ev.eq_s0 && ev.contained == vec![false, true]);
    }

    #[test]
    fn t0_resolution() {
        let s0 = [2, 5];
        assert_eq!(T0Spec::Support.resolve(8, &s0, None).unwrap(), vec![2, 5]);
        assert_eq!(T0Spec::Full.resolve(3, &s0, None).unwrap(), vec![0, 1, 2]);
        assert_eq!(T0Spec::PaddedSupport { extra: 3 }.resolve(8, &s0, None).unwrap(), vec![0, 1, 2, 3, 5]);
        assert!(T0Spec::Explicit { indices: vec![8] }.resolve(8, &s0, None).is_err());
        // column 6 duplicates column 2, column 0 is orthogonal to both support columns
        let mut x = Matrix::zeros(8, 8);
        for j in 0..8 {
            x[(j, j)] = 1.0;
        }
        x[(2, 6)] = 0.9;
        x[(5, 1)] = 0.4;
        assert_eq!(T0Spec::PaddedSupport { extra: 2 }.resolve(8, &s0, Some(&x)).unwrap(), vec![1, 2, 5, 6]);
    }

    #[test]
    fn verdict_rules() {
        assert_eq!(lower_bound_verdict(1.0, 0.1, 0.5), VerdictKind::Pass);
        assert_eq!(lower_bound_verdict(0.45, 0.1, 0.7), VerdictKind::Pass);
        assert_eq!(lower_bound_verdict(0.3, 0.1, 0.7), VerdictKind::Fail);
        assert_eq!(lower_bound_verdict(-0.1, 0.1, -0.5), VerdictKind::Vacuous);
        assert_eq!(lower_bound_verdict(-1.0, 0.1, -0.5), VerdictKind::Fail);
    }

    #[test]
    fn single_coordinate_half_normal_mean() {
        let d = generate_design(50, 4, DesignKind::IidGaussian, 3).unwrap();
        let sigma = 1.0;
        let est = estimate_noise_max(&d.x, &[2], &NoiseSpec::Gaussian { sigma }, 100_000, 9).unwrap();
        let oracle = sigma * (2.0 / (std::f64::consts::PI * 50.0)).sqrt();
        assert!((est.mean - oracle).abs() <= 3.0 * est.se, "{} vs {oracle}", est.mean);
        assert!(estimate_noise_max(&d.x, &[], &NoiseSpec::Gaussian { sigma }, 100, 9).is_err());
        assert!(estimate_noise_max(&d.x, &[0], &NoiseSpec::Gaussian { sigma }, 99, 9).is_err());
    }

    #[test]
    fn records_csv_round_trip() {
        let s = small("csv", 0.5, 1.0, 5);
        let (sum, recs) = run_scenario(&s).unwrap();
        let mut buf = Vec::new();
        write_records_csv(&mut buf, &s.id, sum.lambda_l, &recs).unwrap();
        let mut rd = csv::Reader::from_reader(buf.as_slice());
        let headers = rd.headers().unwrap().clone();
        assert_eq!(headers.get(12), Some("E_in_T0_1"));
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 5 * 2);
        for (row, (r, c)) in rows.iter().zip(recs.iter().flat_map(|r| r.per_c.iter().map(move |c| (r, c)))) {
            assert_eq!(row[6].parse::<f64>().unwrap(), c.delta_gap);
            assert_eq!(row[5].parse::<f64>().unwrap(), c.h);
            assert_eq!(row[4].parse::<usize>().unwrap(), r.e_size);
        }
    }

    #[test]
    fn scenario_json_round_trip() {
        let mut s = small("json", 0.5, 1.0, 5);
        s.t0 = vec![T0Spec::Support, T0Spec::PaddedSupport { extra: 2 }];
        s.bounds = vec![BoundKind::ExactRecovery];
        s.noise = NoiseSpec::MartingaleArch { sigma: 1.0, a: 0.5, b: 0.5 };
        let back: Scenario = serde_json::from_str(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn sweep_single_point_matches_run() {
        let mut s = small("sweep", 0.5, 1.0, 12);
        s.lambda = LambdaRule::UniversalMultiple { multiple: 2.0 };
        s.c_values = vec![3.0];
        let rows = run_sweep(&s, &[2.0], &[3.0]).unwrap();
        let (sum, _) = run_scenario(&s).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].dmse_hat, sum.per_c[0].dmse_hat);
        assert_eq!(rows[0].se, sum.per_c[0].se);
        assert_eq!(rows[0].bound, sum.verdict(3.0, "full_set").map(|v| v.bound));
        assert!(run_sweep(&s, &[], &[3.0]).is_err());
    }
}
