//! Python bindings: `import lrb`.
//!
//! Matrices cross the boundary as lists of rows, vectors as lists of floats,
//! and configuration or summary objects as JSON strings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lrb_core::bounds::{self, BoundInputs};
use lrb_core::designs::{self, DesignKind, NoiseSpec};
use lrb_core::experiments::{self, Scenario};
use lrb_core::lasso::{self, LassoSettings};
use lrb_core::refine;
use lrb_core::verify::{self, VerifyOptions};
use lrb_core::{Error, Matrix, Vector};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Domain(_) | Error::Parse(_) | Error::Config { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<Matrix> {
    let n = rows.len();
    let p = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != p) {
        return Err(PyValueError::new_err("matrix rows must all have the same length"));
    }
    Ok(Matrix::from_fn(n, p, |i, j| rows[i][j]))
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vector(v: Vec<f64>) -> Vector {
    Vector::from_vec(v)
}

fn list(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

/// Certified Lasso solution.
#[pyclass(name = "LassoSolution", frozen, module = "lrb")]
struct PyLassoSolution {
    inner: lasso::LassoSolution,
}

#[pymethods]
impl PyLassoSolution {
    #[getter]
    fn beta(&self) -> Vec<f64> {
        list(&self.inner.beta)
    }
    #[getter]
    fn equi_set(&self) -> Vec<usize> {
        self.inner.equi_set.clone()
    }
    #[getter]
    fn signs(&self) -> Vec<f64> {
        self.inner.signs.clone()
    }
    #[getter]
    fn lambda_l(&self) -> f64 {
        self.inner.lambda_l
    }
    #[getter]
    fn kkt_residual(&self) -> f64 {
        self.inner.kkt_residual
    }
    #[getter]
    fn duality_gap(&self) -> f64 {
        self.inner.duality_gap
    }
    #[getter]
    fn certified(&self) -> bool {
        self.inner.certified
    }
    #[getter]
    fn sweeps(&self) -> usize {
        self.inner.sweeps
    }
    fn support(&self) -> Vec<usize> {
        self.inner.support()
    }
    fn __repr__(&self) -> String {
        format!(
            "LassoSolution(|E|={}, certified={}, kkt_residual={:e})",
            self.inner.equi_set.len(),
            self.inner.certified,
            self.inner.kkt_residual
        )
    }
}

/// Ridge correction on the equicorrelation set.
#[pyclass(name = "RefinedEstimate", frozen, module = "lrb")]
struct PyRefinedEstimate {
    inner: refine::RefinedEstimate,
}

#[pymethods]
impl PyRefinedEstimate {
    #[getter]
    fn delta(&self) -> Vec<f64> {
        list(&self.inner.delta_hat)
    }
    #[getter]
    fn beta_r(&self) -> Vec<f64> {
        list(&self.inner.beta_r)
    }
    #[getter]
    fn lambda_r(&self) -> f64 {
        self.inner.lambda_r
    }
    #[getter]
    fn c(&self) -> f64 {
        self.inner.c
    }
    #[getter]
    fn h(&self) -> f64 {
        self.inner.h_value
    }
    #[getter]
    fn l1_delta(&self) -> f64 {
        self.inner.l1_delta
    }
    fn __repr__(&self) -> String {
        format!("RefinedEstimate(c={}, lambda_r={}, h={:e})", self.inner.c, self.inner.lambda_r, self.inner.h_value)
    }
}

/// Column-normalized design as a list of rows. `kind` uses the text form,
/// e.g. `"iid_gaussian"`, `"ar1(rho=0.5)"`, `"clustered(k=8;delta=0.2;r=3)"`.
#[pyfunction]
fn generate_design(n: usize, p: usize, kind: &str, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let kind: DesignKind = kind.parse().map_err(to_py)?;
    Ok(rows(&designs::generate_design(n, p, kind, seed).map_err(to_py)?.x))
}

/// Noise vector; `kind` is `gaussian`, `rademacher` or `martingale_arch`.
#[pyfunction]
#[pyo3(signature = (n, sigma, seed, kind = "gaussian", a = 0.5, b = 0.5))]
fn generate_noise(n: usize, sigma: f64, seed: u64, kind: &str, a: f64, b: f64) -> PyResult<Vec<f64>> {
    let spec = match kind {
        "gaussian" => NoiseSpec::Gaussian { sigma },
        "rademacher" => NoiseSpec::Rademacher { sigma },
        "martingale_arch" => NoiseSpec::MartingaleArch { sigma, a, b },
        other => return Err(PyValueError::new_err(format!("unknown noise kind `{other}`"))),
    };
    Ok(list(&designs::generate_noise(n, &spec, seed).map_err(to_py)?))
}

#[pyfunction]
#[pyo3(signature = (x, y, lambda_l, tol = None))]
fn solve_lasso(x: Vec<Vec<f64>>, y: Vec<f64>, lambda_l: f64, tol: Option<f64>) -> PyResult<PyLassoSolution> {
    let mut settings = LassoSettings::default();
    if let Some(t) = tol {
        settings.tol = t;
    }
    let inner = lasso::solve_lasso(&matrix(&x)?, &vector(y), lambda_l, &settings).map_err(to_py)?;
    Ok(PyLassoSolution { inner })
}

#[pyfunction]
fn refine_lasso(x: Vec<Vec<f64>>, solution: &PyLassoSolution, c: f64) -> PyResult<PyRefinedEstimate> {
    let inner = refine::refine(&matrix(&x)?, &solution.inner, c).map_err(to_py)?;
    Ok(PyRefinedEstimate { inner })
}

/// `(1/n)||X(beta_L - beta0)||^2 - (1/n)||X(beta_R - beta0)||^2`.
#[pyfunction]
fn prediction_gap(
    x: Vec<Vec<f64>>,
    beta0: Vec<f64>,
    solution: &PyLassoSolution,
    refined: &PyRefinedEstimate,
) -> PyResult<f64> {
    Ok(refine::prediction_gap(&matrix(&x)?, &vector(beta0), &solution.inner, &refined.inner))
}

/// `(2/n) <X delta, eps>`.
#[pyfunction]
fn noise_interaction(x: Vec<Vec<f64>>, refined: &PyRefinedEstimate, eps: Vec<f64>) -> PyResult<f64> {
    Ok(refine::noise_interaction(&matrix(&x)?, &refined.inner, &vector(eps)))
}

/// Deterministic lower bound on `H` over all designs and sign patterns.
#[pyfunction]
fn h_lower_bound(lambda_l: f64, c: f64) -> f64 {
    refine::h_lower_bound(lambda_l, c)
}

#[pyfunction]
fn leading_factor(c: f64) -> f64 {
    bounds::leading_factor(c)
}

/// Evaluates every bound from a JSON object of bound inputs; returns JSON.
#[pyfunction]
fn evaluate_bounds(inputs_json: &str) -> PyResult<String> {
    let inputs: BoundInputs = serde_json::from_str(inputs_json).map_err(json_err)?;
    let report = bounds::evaluate(&inputs).map_err(to_py)?;
    serde_json::to_string(&report).map_err(json_err)
}

/// Runs one scenario (JSON) and returns `(summary_json, records_json)`.
/// The GIL is released while the replications run.
#[pyfunction]
fn run_scenario(py: Python<'_>, scenario_json: &str) -> PyResult<(String, String)> {
    let scenario: Scenario = serde_json::from_str(scenario_json).map_err(json_err)?;
    scenario.validate().map_err(to_py)?;
    let (summary, records) = py.detach(|| experiments::run_scenario(&scenario)).map_err(to_py)?;
    Ok((serde_json::to_string(&summary).map_err(json_err)?, serde_json::to_string(&records).map_err(json_err)?))
}

/// Runs the named property suites (all when empty); returns the JSON reports.
#[pyfunction]
#[pyo3(signature = (only = Vec::new(), instances = None, mc_reps = None, seed = None))]
fn run_verify(
    py: Python<'_>,
    only: Vec<String>,
    instances: Option<usize>,
    mc_reps: Option<usize>,
    seed: Option<u64>,
) -> PyResult<String> {
    let mut opts = VerifyOptions::default();
    if let Some(i) = instances {
        opts.instances = i;
    }
    if let Some(m) = mc_reps {
        opts.mc_reps = m;
    }
    if let Some(s) = seed {
        opts.seed = s;
    }
    let reports = py.detach(|| verify::run_verify(&only, &opts)).map_err(to_py)?;
    serde_json::to_string(&reports).map_err(json_err)
}

#[pymodule]
fn lrb(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLassoSolution>()?;
    m.add_class::<PyRefinedEstimate>()?;
    m.add_function(wrap_pyfunction!(generate_design, m)?)?;
    m.add_function(wrap_pyfunction!(generate_noise, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(refine_lasso, m)?)?;
    m.add_function(wrap_pyfunction!(prediction_gap, m)?)?;
    m.add_function(wrap_pyfunction!(noise_interaction, m)?)?;
    m.add_function(wrap_pyfunction!(h_lower_bound, m)?)?;
    m.add_function(wrap_pyfunction!(leading_factor, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(run_verify, m)?)?;
    m.add("SUITES", verify::SUITES.to_vec())?;
    Ok(())
}
