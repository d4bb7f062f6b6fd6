//! Design matrices, true coefficient vectors and noise generators.
//!
//! All generators are pure functions of their parameters and a `u64` seed.
//! Columns are always rescaled to squared norm exactly `n`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::{numerical_rank, select_columns, Matrix, Vector};
use crate::rng::{derive_seed, rng_from_seed, Rng};

const NORM_TOL: f64 = 1e-8;
const RANK_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DesignKind {
    IidGaussian,
    /// Rows drawn from a covariance with unit diagonal and constant off-diagonal `rho`.
    Equicorrelated {
        rho: f64,
    },
    /// Rows drawn from a stationary AR(1) covariance, `Cov(x_j, x_k) = rho^|j-k|`.
    Ar1 {
        rho: f64,
    },
    /// `clusters` representatives in a random `rank`-dimensional subspace, each
    /// column within `delta * sqrt(n)` of its representative.
    Clustered {
        clusters: usize,
        delta: f64,
        rank: usize,
    },
    /// `X^T X / n = I` exactly (requires `p <= n`).
    Orthonormal,
}

impl fmt::Display for DesignKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DesignKind::IidGaussian => write!(f, "iid_gaussian"),
            DesignKind::Equicorrelated { rho } => write!(f, "equicorrelated(rho={rho})"),
            DesignKind::Ar1 { rho } => write!(f, "ar1(rho={rho})"),
            DesignKind::Clustered { clusters, delta, rank } => {
                write!(f, "clustered(k={clusters};delta={delta};r={rank})")
            }
            DesignKind::Orthonormal => write!(f, "orthonormal"),
        }
    }
}

impl FromStr for DesignKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], &s[i + 1..s.len() - 1]),
            _ => (s, ""),
        };
        let arg = |key: &str| -> Result<f64> {
            args.split(';')
                .filter_map(|kv| kv.split_once('='))
                .find(|(k, _)| k.trim() == key)
                .ok_or_else(|| Error::Parse(format!("design kind `{s}` is missing `{key}`")))?
                .1
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("design kind `{s}`: {e}")))
        };
        match name {
            "iid_gaussian" => Ok(DesignKind::IidGaussian),
            "equicorrelated" => Ok(DesignKind::Equicorrelated { rho: arg("rho")? }),
            "ar1" => Ok(DesignKind::Ar1 { rho: arg("rho")? }),
            "clustered" => Ok(DesignKind::Clustered {
                clusters: arg("k")? as usize,
                delta: arg("delta")?,
                rank: arg("r")? as usize,
            }),
            "orthonormal" => Ok(DesignKind::Orthonormal),
            other => Err(Error::Parse(format!("unknown design kind `{other}`"))),
        }
    }
}

/// Outcome of the random-subset rank probe used as a general position surrogate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralPositionReport {
    pub subsets_tested: usize,
    pub subset_size: usize,
    pub min_rank: usize,
    pub full_rank: bool,
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: Matrix,
    pub kind: DesignKind,
    /// Cluster index of each column (clustered designs only).
    pub cluster_assignment: Option<Vec<usize>>,
    /// `n x K`, one representative of norm `sqrt(n)` per column.
    pub representatives: Option<Matrix>,
    pub subspace_rank: Option<usize>,
    pub general_position: Option<GeneralPositionReport>,
}

impl DesignMatrix {
    /// Wraps an existing matrix, checking column normalization.
    pub fn from_matrix(x: Matrix, kind: DesignKind) -> Result<Self> {
        let d = DesignMatrix {
            x,
            kind,
            cluster_assignment: None,
            representatives: None,
            subspace_rank: None,
            general_position: None,
        };
        let dev = d.max_norm_deviation();
        if dev > NORM_TOL {
            return domain(format!("columns are not normalized to n (max relative deviation {dev:e})"));
        }
        Ok(d)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// `max_j | ||X_j||^2 / n - 1 |`.
    pub fn max_norm_deviation(&self) -> f64 {
        let n = self.n() as f64;
        self.x.column_iter().map(|c| (c.norm_squared() / n - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn num_clusters(&self) -> Option<usize> {
        self.representatives.as_ref().map(|r| r.ncols())
    }

    /// `max_j ||X_j - v_{r(j)}||_2` for clustered designs.
    pub fn max_cluster_distance(&self) -> Option<f64> {
        let reps = self.representatives.as_ref()?;
        let assign = self.cluster_assignment.as_ref()?;
        Some(self.x.column_iter().zip(assign).map(|(col, &k)| (col - reps.column(k)).norm()).fold(0.0, f64::max))
    }

    /// Probes `subsets` random column subsets of size `min(n, p)` for full
    /// numerical column rank.
    pub fn check_general_position(&self, subsets: usize, seed: u64) -> GeneralPositionReport {
        let (n, p) = (self.n(), self.p());
        let size = n.min(p);
        let mut rng = rng_from_seed(seed);
        let mut min_rank = size;
        for _ in 0..subsets {
            let idx = rand::seq::index::sample(&mut rng, p, size).into_vec();
            let rank = numerical_rank(&select_columns(&self.x, &idx), RANK_RTOL);
            min_rank = min_rank.min(rank);
        }
        GeneralPositionReport { subsets_tested: subsets, subset_size: size, min_rank, full_rank: min_rank == size }
    }

    /// Row-major CSV with a leading `# n=..,p=..,kind=..` comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# n={},p={},kind={}", self.n(), self.p(), self.kind)?;
        for row in self.x.row_iter() {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty design file".into()))??;
        let header = header
            .strip_prefix('#')
            .ok_or_else(|| Error::Parse("design file must start with a `# n=..,p=..,kind=..` line".into()))?;
        let (mut n, mut p, mut kind) = (None, None, None);
        // kind may itself contain commas-free `k=v;k=v` arguments
        for field in header.trim().splitn(3, ',') {
            match field.split_once('=') {
                Some(("n", v)) => n = v.trim().parse::<usize>().ok(),
                Some(("p", v)) => p = v.trim().parse::<usize>().ok(),
                Some(("kind", v)) => kind = Some(v.parse::<DesignKind>()?),
                _ => return Err(Error::Parse(format!("bad header field `{field}`"))),
            }
        }
        let (n, p, kind) = match (n, p, kind) {
            (Some(n), Some(p), Some(k)) => (n, p, k),
            _ => return Err(Error::Parse("header must define n, p and kind".into())),
        };
        let mut data = Vec::with_capacity(n * p);
        let mut rows = 0;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for v in line.split(',') {
                data.push(v.trim().parse::<f64>().map_err(|e| Error::Parse(format!("row {}: {e}", rows + 1)))?);
            }
            rows += 1;
            if data.len() != rows * p {
                return Err(Error::Parse(format!("row {rows} does not have {p} entries")));
            }
        }
        if rows != n {
            return Err(Error::Parse(format!("expected {n} rows, found {rows}")));
        }
        Self::from_matrix(Matrix::from_row_slice(n, p, &data), kind)
    }
}

fn gaussian_matrix(rng: &mut Rng, n: usize, p: usize) -> Matrix {
    Matrix::from_fn(n, p, |_, _| StandardNormal.sample(rng))
}

fn gaussian_vector(rng: &mut Rng, n: usize) -> Vector {
    Vector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Rescales every column to norm `sqrt(n)`; `false` if some column is zero.
fn normalize_columns(x: &mut Matrix) -> bool {
    let target = (x.nrows() as f64).sqrt();
    for mut col in x.column_iter_mut() {
        let norm = col.norm();
        if norm == 0.0 || !norm.is_finite() {
            return false;
        }
        col *= target / norm;
    }
    true
}

/// Orthonormal basis (as columns) of a random `k`-dimensional subspace of R^n.
fn random_orthonormal(rng: &mut Rng, n: usize, k: usize) -> Matrix {
    let g = gaussian_matrix(rng, n, k);
    g.qr().q().columns(0, k).into_owned()
}

pub fn generate_design(n: usize, p: usize, kind: DesignKind, seed: u64) -> Result<DesignMatrix> {
    if n < 2 || p < 1 {
        return domain(format!("design needs n >= 2 and p >= 1, got n={n}, p={p}"));
    }
    if let DesignKind::Clustered { clusters, delta, rank } = kind {
        return generate_clustered_design(n, p, rank, delta, Some(clusters), seed);
    }
    match kind {
        DesignKind::Equicorrelated { rho } if !(0.0..1.0).contains(&rho) => {
            return domain(format!("equicorrelation rho must be in [0, 1), got {rho}"));
        }
        DesignKind::Ar1 { rho } if rho.abs() >= 1.0 => {
            return domain(format!("AR(1) rho must satisfy |rho| < 1, got {rho}"));
        }
        DesignKind::Orthonormal if p > n => {
            return domain(format!("orthonormal design needs p <= n, got p={p} > n={n}"));
        }
        _ => {}
    }

    // A zero column has probability zero; retry on a perturbed stream if it happens.
    for attempt in 0u64.. {
        let mut rng = rng_from_seed(derive_seed(seed, "design", "attempt", attempt));
        let mut x = match kind {
            DesignKind::IidGaussian => gaussian_matrix(&mut rng, n, p),
            DesignKind::Equicorrelated { rho } => {
                let z = gaussian_matrix(&mut rng, n, p);
                let common = gaussian_vector(&mut rng, n);
                let (a, b) = (rho.sqrt(), (1.0 - rho).sqrt());
                Matrix::from_fn(n, p, |i, j| a * common[i] + b * z[(i, j)])
            }
            DesignKind::Ar1 { rho } => {
                let z = gaussian_matrix(&mut rng, n, p);
                let innov = (1.0 - rho * rho).sqrt();
                let mut x = Matrix::zeros(n, p);
                for i in 0..n {
                    x[(i, 0)] = z[(i, 0)];
                    for j in 1..p {
                        x[(i, j)] = rho * x[(i, j - 1)] + innov * z[(i, j)];
                    }
                }
                x
            }
            DesignKind::Orthonormal => random_orthonormal(&mut rng, n, p),
            DesignKind::Clustered { .. } => unreachable!(),
        };
        if normalize_columns(&mut x) {
            return DesignMatrix::from_matrix(x, kind);
        }
        if attempt > 16 {
            break;
        }
    }
    Err(Error::Numeric("could not draw a design without degenerate columns".into()))
}

/// Upper bound `(1 + 2/delta)^r` on the size of a delta-net of the unit sphere in R^r.
pub fn net_size_bound(delta: f64, r: usize) -> f64 {
    (1.0 + 2.0 / delta).powi(r as i32)
}

/// Greedy farthest-point selection of `k` well-separated unit vectors in R^r.
fn farthest_point_net(rng: &mut Rng, r: usize, k: usize) -> Vec<Vector> {
    let pool = (64 * k).max(256);
    let candidates: Vec<Vector> = (0..pool)
        .map(|_| {
            let g = gaussian_vector(rng, r);
            let norm = g.norm();
            g / norm
        })
        .collect();
    let mut chosen = vec![candidates[0].clone()];
    let mut dist: Vec<f64> = candidates.iter().map(|c| (c - &chosen[0]).norm()).collect();
    while chosen.len() < k {
        let (far, _) = dist
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &d)| if d > best.1 { (i, d) } else { best });
        let next = candidates[far].clone();
        for (d, c) in dist.iter_mut().zip(&candidates) {
            *d = d.min((c - &next).norm());
        }
        chosen.push(next);
    }
    chosen
}

/// Clustered design with approximate low-dimensional structure.
///
/// Representatives are a greedy farthest-point net on the unit sphere of a
/// random `r`-dimensional subspace, scaled to norm `sqrt(n)`. Each column is
/// its representative plus a perturbation orthogonal to it (with components
/// both inside and outside the subspace) of norm below `delta * sqrt(n)`,
/// then renormalized; orthogonality keeps the renormalized column within
/// `delta * sqrt(n)` of the representative.
///
/// `clusters` defaults to `min(p, floor((1 + 2/delta)^r))`.
pub fn generate_clustered_design(
    n: usize,
    p: usize,
    r: usize,
    delta: f64,
    clusters: Option<usize>,
    seed: u64,
) -> Result<DesignMatrix> {
    if n < 2 || p < 1 {
        return domain(format!("design needs n >= 2 and p >= 1, got n={n}, p={p}"));
    }
    if r < 1 || r > n {
        return domain(format!("subspace dimension must satisfy 1 <= r <= n, got r={r}"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return domain(format!("cluster tightness delta must be in (0, 1], got {delta}"));
    }
    let bound = net_size_bound(delta, r);
    let k = clusters.unwrap_or_else(|| (bound.floor() as usize).min(p));
    if k < 1 || k > p {
        return domain(format!("number of clusters must be in [1, p], got {k}"));
    }
    if k as f64 > bound {
        return domain(format!("{k} clusters exceed the covering bound (1+2/delta)^r = {bound}"));
    }

    let sqrt_n = (n as f64).sqrt();
    let mut rng = rng_from_seed(derive_seed(seed, "design", "clustered", 0));
    let basis = random_orthonormal(&mut rng, n, r);
    let net = farthest_point_net(&mut rng, r, k);
    let reps = Matrix::from_columns(&net.iter().map(|u| &basis * u * sqrt_n).collect::<Vec<_>>());

    let assignment: Vec<usize> = (0..p).map(|j| j % k).collect();
    let radius = delta * sqrt_n * (1.0 - 1e-6);
    let mut x = Matrix::zeros(n, p);
    for (j, &c) in assignment.iter().enumerate() {
        let v = reps.column(c);
        let mut w = gaussian_vector(&mut rng, n);
        let along = w.dot(&v) / (n as f64);
        w -= v * along;
        let scale = radius * rng.random_range(0.5..=1.0) / w.norm();
        let col = v + w * scale;
        x.set_column(j, &(&col * (sqrt_n / col.norm())));
    }

    let mut design = DesignMatrix {
        x,
        kind: DesignKind::Clustered { clusters: k, delta, rank: r },
        cluster_assignment: Some(assignment),
        representatives: Some(reps),
        subspace_rank: Some(r),
        general_position: None,
    };
    let report = design.check_general_position(3, derive_seed(seed, "design", "rank-probe", 0));
    design.general_position = Some(report);
    Ok(design)
}

/// Sign pattern on the true support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignPattern {
    #[default]
    Alternating,
    Positive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrueModel {
    pub beta0: Vec<f64>,
    /// Sorted support `S0`.
    pub support: Vec<usize>,
    pub magnitude: f64,
    /// `+/-1` on each support index, aligned with `support`.
    pub sign_pattern: Vec<f64>,
}

impl TrueModel {
    /// Equal magnitudes on `support`, signs following `pattern`.
    pub fn new(p: usize, support: &[usize], magnitude: f64, pattern: SignPattern) -> Result<Self> {
        let mut support = support.to_vec();
        support.sort_unstable();
        support.dedup();
        if support.len() > p || support.last().is_some_and(|&j| j >= p) {
            return domain(format!("support indices must be distinct and < p = {p}"));
        }
        if magnitude < 0.0 || !magnitude.is_finite() {
            return domain(format!("signal magnitude must be finite and >= 0, got {magnitude}"));
        }
        let sign_pattern: Vec<f64> = (0..support.len())
            .map(|i| match pattern {
                SignPattern::Alternating if i % 2 == 1 => -1.0,
                _ => 1.0,
            })
            .collect();
        let mut beta0 = vec![0.0; p];
        if magnitude > 0.0 {
            for (&j, &s) in support.iter().zip(&sign_pattern) {
                beta0[j] = s * magnitude;
            }
        } else {
            support.clear();
        }
        let sign_pattern = sign_pattern[..support.len()].to_vec();
        Ok(TrueModel { beta0, support, magnitude, sign_pattern })
    }

    /// Support on the first `k` columns.
    pub fn leading(p: usize, k: usize, magnitude: f64, pattern: SignPattern) -> Result<Self> {
        Self::new(p, &(0..k).collect::<Vec<_>>(), magnitude, pattern)
    }

    pub fn beta0_vector(&self) -> Vector {
        Vector::from_column_slice(&self.beta0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    Gaussian {
        sigma: f64,
    },
    /// `eps_i = tau_i z_i` with `tau_i^2 = sigma^2 min(1, a + b eps_{i-1}^2 / sigma^2)`.
    MartingaleArch {
        sigma: f64,
        a: f64,
        b: f64,
    },
    Rademacher {
        sigma: f64,
    },
}

impl NoiseSpec {
    pub fn sigma(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { sigma }
            | NoiseSpec::MartingaleArch { sigma, .. }
            | NoiseSpec::Rademacher { sigma } => sigma,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self, NoiseSpec::Gaussian { .. })
    }

    pub fn validate(&self) -> Result<()> {
        let sigma = self.sigma();
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return domain(format!("noise scale must be finite and >= 0, got {sigma}"));
        }
        if let NoiseSpec::MartingaleArch { a, b, .. } = *self {
            if a < 0.0 || b < 0.0 || a + b > 1.0 {
                return domain(format!("ARCH noise needs a, b >= 0 and a + b <= 1, got a={a}, b={b}"));
            }
        }
        Ok(())
    }
}

pub fn generate_noise(n: usize, spec: &NoiseSpec, seed: u64) -> Result<Vector> {
    if n < 1 {
        return domain("noise length must be >= 1");
    }
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let eps = match *spec {
        NoiseSpec::Gaussian { sigma } => Vector::from_fn(n, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        }),
        NoiseSpec::Rademacher { sigma } => Vector::from_fn(n, |_, _| if rng.random::<bool>() { sigma } else { -sigma }),
        NoiseSpec::MartingaleArch { sigma, a, b } => {
            let mut eps = Vector::zeros(n);
            if sigma > 0.0 {
                let s2 = sigma * sigma;
                let mut prev = 0.0f64;
                for e in eps.iter_mut() {
                    let tau2 = s2 * (a + b * prev * prev / s2).min(1.0);
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *e = tau2.sqrt() * z;
                    prev = *e;
                }
            }
            eps
        }
    };
    Ok(eps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_column_is_normalized() {
        let d = generate_design(10, 1, DesignKind::IidGaussian, 3).unwrap();
        assert!((d.x.column(0).norm_squared() - 10.0).abs() < 1e-10);
    }

    #[test]
    fn all_kinds_are_normalized() {
        let kinds = [
            DesignKind::IidGaussian,
            DesignKind::Equicorrelated { rho: 0.5 },
            DesignKind::Ar1 { rho: -0.7 },
            DesignKind::Orthonormal,
            DesignKind::Clustered { clusters: 4, delta: 0.5, rank: 2 },
        ];
        for kind in kinds {
            let d = generate_design(30, 12, kind, 5).unwrap();
            assert!(d.max_norm_deviation() <= 1e-8, "{kind}");
        }
    }

    #[test]
    fn orthonormal_gram_is_identity() {
        let d = generate_design(40, 8, DesignKind::Orthonormal, 1).unwrap();
        let g = d.x.tr_mul(&d.x) / 40.0;
        assert!((g - Matrix::identity(8, 8)).amax() < 1e-12);
        assert!(generate_design(5, 8, DesignKind::Orthonormal, 1).is_err());
    }

    #[test]
    fn equicorrelated_mean_off_diagonal() {
        let mut total = 0.0;
        for seed in 0..100 {
            let d = generate_design(50, 20, DesignKind::Equicorrelated { rho: 0.8 }, seed).unwrap();
            let g = d.x.tr_mul(&d.x) / 50.0;
            let off: f64 = (0..20)
                .flat_map(|i| (0..20).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| g[(i, j)])
                .sum();
            total += off / (20.0 * 19.0);
        }
        let mean = total / 100.0;
        assert!((mean - 0.8).abs() < 0.15, "mean off-diagonal {mean}");
    }

    #[test]
    fn clustered_design_is_delta_tight() {
        let d = generate_design(100, 200, DesignKind::Clustered { clusters: 8, delta: 0.2, rank: 3 }, 9).unwrap();
        assert!(d.max_cluster_distance().unwrap() <= 0.2 * 10.0);
        assert_eq!(d.num_clusters(), Some(8));
        let gp = d.general_position.as_ref().unwrap();
        assert!(gp.full_rank, "{gp:?}");
    }

    #[test]
    fn clustered_default_k_respects_bound() {
        let d = generate_clustered_design(100, 500, 3, 0.3, None, 4).unwrap();
        let k = d.num_clusters().unwrap();
        assert!(k as f64 <= net_size_bound(0.3, 3));
        assert!(d.max_cluster_distance().unwrap() <= 0.3 * 10.0);
        assert!(d.max_norm_deviation() <= 1e-8);
    }

    #[test]
    fn net_bound_arithmetic() {
        assert_eq!(net_size_bound(1.0, 1), 3.0);
        assert_eq!(net_size_bound(0.5, 2), 25.0);
        assert!(generate_clustered_design(10, 5, 1, 1.0, Some(3), 0).is_ok());
        assert!(generate_clustered_design(10, 5, 1, 1.0, Some(4), 0).is_err());
    }

    #[test]
    fn clustered_rejects_bad_delta() {
        assert!(generate_clustered_design(10, 5, 2, 0.0, None, 0).is_err());
        assert!(generate_clustered_design(10, 5, 2, 1.5, None, 0).is_err());
        assert!(generate_clustered_design(10, 5, 0, 0.5, None, 0).is_err());
    }

    #[test]
    fn same_seed_same_design() {
        let a = generate_design(20, 7, DesignKind::Ar1 { rho: 0.3 }, 77).unwrap();
        let b = generate_design(20, 7, DesignKind::Ar1 { rho: 0.3 }, 77).unwrap();
        assert_eq!(a.x, b.x);
    }

    #[test]
    fn csv_round_trip() {
        let d = generate_design(6, 4, DesignKind::Equicorrelated { rho: 0.25 }, 2).unwrap();
        let mut buf = Vec::new();
        d.write_csv(&mut buf).unwrap();
        let back = DesignMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back.x, d.x);
        assert_eq!(back.kind, d.kind);

        let c = generate_design(6, 4, DesignKind::Clustered { clusters: 2, delta: 0.5, rank: 2 }, 2).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        assert_eq!(DesignMatrix::read_csv(&buf[..]).unwrap().kind, c.kind);
    }

    #[test]
    fn csv_rejects_unnormalized() {
        let text = "# n=2,p=1,kind=iid_gaussian\n1.0\n0.5\n";
        assert!(DesignMatrix::read_csv(text.as_bytes()).is_err());
    }

    #[test]
    fn true_model_layout() {
        let m = TrueModel::leading(6, 3, 2.0, SignPattern::Alternating).unwrap();
        assert_eq!(m.beta0, vec![2.0, -2.0, 2.0, 0.0, 0.0, 0.0]);
        assert_eq!(m.support, vec![0, 1, 2]);
        let zero = TrueModel::leading(6, 3, 0.0, SignPattern::Positive).unwrap();
        assert!(zero.support.is_empty());
        assert!(TrueModel::new(3, &[3], 1.0, SignPattern::Positive).is_err());
    }

    #[test]
    fn degenerate_gaussian_noise_is_zero() {
        let e = generate_noise(5, &NoiseSpec::Gaussian { sigma: 0.0 }, 1).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn arch_with_unit_a_is_iid_gaussian() {
        let arch = generate_noise(50, &NoiseSpec::MartingaleArch { sigma: 1.0, a: 1.0, b: 0.0 }, 8).unwrap();
        let gauss = generate_noise(50, &NoiseSpec::Gaussian { sigma: 1.0 }, 8).unwrap();
        assert!((arch - gauss).amax() < 1e-15);
    }

    #[test]
    fn arch_rejects_explosive_parameters() {
        let spec = NoiseSpec::MartingaleArch { sigma: 1.0, a: 0.7, b: 0.4 };
        assert!(generate_noise(10, &spec, 0).is_err());
        let spec = NoiseSpec::MartingaleArch { sigma: 1.0, a: -0.1, b: 0.4 };
        assert!(generate_noise(10, &spec, 0).is_err());
    }

    #[test]
    fn arch_moments() {
        let n = 100_000;
        let eps = generate_noise(n, &NoiseSpec::MartingaleArch { sigma: 1.0, a: 0.5, b: 0.4 }, 21).unwrap();
        let (mean, se) = crate::numerics::mean_and_se(eps.as_slice());
        assert!(mean.abs() <= 3.0 * se, "mean {mean} se {se}");
        let sq: Vec<f64> = eps.iter().map(|e| e * e).collect();
        let (m2, se2) = crate::numerics::mean_and_se(&sq);
        assert!(m2 <= 1.0 + 3.0 * se2, "second moment {m2}");

        // conditional second moment by bins of |eps_{i-1}|
        let edges = [0.0, 0.5, 1.0, 1.5, f64::INFINITY];
        for w in edges.windows(2) {
            let bin: Vec<f64> =
                (1..n).filter(|&i| (w[0]..w[1]).contains(&eps[i - 1].abs())).map(|i| eps[i] * eps[i]).collect();
            if bin.len() < 100 {
                continue;
            }
            let (m, s) = crate::numerics::mean_and_se(&bin);
            assert!(m <= 1.0 + 3.0 * s, "bin {w:?}: {m}");
        }
    }

    #[test]
    fn rademacher_has_fixed_magnitude() {
        let e = generate_noise(100, &NoiseSpec::Rademacher { sigma: 0.3 }, 4).unwrap();
        assert!(e.iter().all(|v| (v.abs() - 0.3).abs() < 1e-15));
    }
}
