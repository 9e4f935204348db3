//! Python bindings. Locations are passed as lists of coordinate lists,
//! observations as lists of floats.

use maternkit::simulation::{ExperimentConfig, FieldSimulator, RngStream};
use maternkit::verify::{run_verify, VerifyOptions};
use maternkit::{Design, Error, FitConfig, Location, MaternParams, Observations};
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn design(locations: Vec<Vec<f64>>) -> PyResult<Design> {
    Design::from_rows(&locations).map_err(to_py)
}

fn observations(z: Vec<f64>) -> PyResult<Observations> {
    Observations::new(z).map_err(to_py)
}

fn location(coords: Vec<f64>) -> PyResult<Location> {
    Location::new(&coords).map_err(to_py)
}

/// Estimates from a likelihood fit.
#[pyclass(frozen, get_all, skip_from_py_object, name = "FitResult", module = "maternkit_py")]
#[derive(Clone)]
pub struct PyFitResult {
    mode: String,
    nu: f64,
    rho_hat: f64,
    sigma2_hat: f64,
    c_hat: f64,
    loglik: f64,
    ci: (f64, f64),
    n: usize,
    at_boundary: bool,
    evaluations: usize,
}

impl From<maternkit::FitResult> for PyFitResult {
    fn from(r: maternkit::FitResult) -> Self {
        let mode = serde_json::to_value(r.mode)
            .ok()
            .and_then(|v| v.as_str().map(str::to_owned))
            .unwrap_or_default();
        Self {
            mode,
            nu: r.nu,
            rho_hat: r.rho_hat,
            sigma2_hat: r.sigma2_hat,
            c_hat: r.c_hat,
            loglik: r.loglik,
            ci: r.ci_c,
            n: r.n,
            at_boundary: r.at_boundary,
            evaluations: r.evaluations,
        }
    }
}

#[pymethods]
impl PyFitResult {
    /// Whether the interval for `c` contains `c`.
    fn covers(&self, c: f64) -> bool {
        self.ci.0 <= c && c <= self.ci.1
    }

    fn __repr__(&self) -> String {
        format!(
            "FitResult(mode='{}', rho_hat={}, sigma2_hat={}, c_hat={}, ci=({}, {}))",
            self.mode, self.rho_hat, self.sigma2_hat, self.c_hat, self.ci.0, self.ci.1
        )
    }
}

/// Factorized kriging system for one design, range and smoothness.
#[pyclass(frozen, name = "Kriger", module = "maternkit_py")]
pub struct PyKriger {
    inner: maternkit::Kriger,
}

#[pymethods]
impl PyKriger {
    #[new]
    fn new(locations: Vec<Vec<f64>>, rho: f64, nu: f64) -> PyResult<Self> {
        let inner = maternkit::Kriger::new(&design(locations)?, rho, nu).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn predict(&self, z: Vec<f64>, target: Vec<f64>) -> PyResult<f64> {
        self.inner.predict(&observations(z)?, &location(target)?).map_err(to_py)
    }

    fn weights(&self, target: Vec<f64>) -> PyResult<Vec<f64>> {
        Ok(self
            .inner
            .weights(&location(target)?)
            .map_err(to_py)?
            .as_slice()
            .to_vec())
    }

    fn naive_mspe(&self, target: Vec<f64>, sigma2: f64) -> PyResult<f64> {
        self.inner.naive_mspe(&location(target)?, sigma2).map_err(to_py)
    }
}

#[pyfunction]
fn matern_correlation(h: f64, rho: f64, nu: f64) -> PyResult<f64> {
    maternkit::matern_correlation(h, rho, nu).map_err(to_py)
}

#[pyfunction]
fn effective_range_to_rho(effective_range: f64, nu: f64) -> PyResult<f64> {
    maternkit::effective_range_to_rho(effective_range, nu).map_err(to_py)
}

#[pyfunction]
fn correlation_matrix(locations: Vec<Vec<f64>>, rho: f64, nu: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = maternkit::correlation_matrix(&design(locations)?, rho, nu)
        .map_err(to_py)?
        .into_matrix();
    Ok(m.row_iter().map(|r| r.iter().copied().collect()).collect())
}

#[pyfunction]
#[pyo3(signature = (z, locations, nu, rho_lower = FitConfig::DEFAULT_RHO_LOWER, rho_upper = FitConfig::DEFAULT_RHO_UPPER))]
fn fit_mle(z: Vec<f64>, locations: Vec<Vec<f64>>, nu: f64, rho_lower: f64, rho_upper: f64) -> PyResult<PyFitResult> {
    let config = FitConfig::new(nu).with_bounds(rho_lower, rho_upper);
    maternkit::fit_mle(&observations(z)?, &design(locations)?, &config)
        .map(Into::into)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (z, locations, rho, nu, n_for_ci = None))]
fn fit_fixed_rho(
    z: Vec<f64>,
    locations: Vec<Vec<f64>>,
    rho: f64,
    nu: f64,
    n_for_ci: Option<usize>,
) -> PyResult<PyFitResult> {
    let n = n_for_ci.unwrap_or(z.len());
    maternkit::fit_fixed_rho(&observations(z)?, &design(locations)?, rho, nu, n)
        .map(Into::into)
        .map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (z, locations, nu, taper_range, rho_lower = FitConfig::DEFAULT_RHO_LOWER, rho_upper = FitConfig::DEFAULT_RHO_UPPER))]
fn fit_tapered(
    z: Vec<f64>,
    locations: Vec<Vec<f64>>,
    nu: f64,
    taper_range: f64,
    rho_lower: f64,
    rho_upper: f64,
) -> PyResult<PyFitResult> {
    let config = FitConfig::new(nu).with_bounds(rho_lower, rho_upper);
    maternkit::fit_tapered(&observations(z)?, &design(locations)?, &config, taper_range)
        .map(Into::into)
        .map_err(to_py)
}

#[pyfunction]
fn microergodic_estimate(z: Vec<f64>, locations: Vec<Vec<f64>>, rho: f64, nu: f64) -> PyResult<f64> {
    maternkit::microergodic_estimate(&observations(z)?, &design(locations)?, rho, nu).map_err(to_py)
}

#[pyfunction]
fn krig_predict(z: Vec<f64>, locations: Vec<Vec<f64>>, target: Vec<f64>, rho: f64, nu: f64) -> PyResult<f64> {
    maternkit::krig_predict(&observations(z)?, &design(locations)?, &location(target)?, rho, nu).map_err(to_py)
}

#[pyfunction]
fn naive_mspe(locations: Vec<Vec<f64>>, target: Vec<f64>, sigma2: f64, rho: f64, nu: f64) -> PyResult<f64> {
    maternkit::naive_mspe(&design(locations)?, &location(target)?, sigma2, rho, nu).map_err(to_py)
}

#[pyfunction]
fn true_mspe(
    locations: Vec<Vec<f64>>,
    target: Vec<f64>,
    rho_used: f64,
    sigma2_0: f64,
    rho_0: f64,
    nu: f64,
) -> PyResult<f64> {
    let truth = MaternParams::new(sigma2_0, rho_0, nu).map_err(to_py)?;
    maternkit::true_mspe(&design(locations)?, &location(target)?, rho_used, &truth).map_err(to_py)
}

/// One field realization at `locations`, drawn from stream `(seed, replicate)`.
#[pyfunction]
#[pyo3(signature = (locations, sigma2, rho, nu, seed, replicate = 0))]
fn simulate_field(
    locations: Vec<Vec<f64>>,
    sigma2: f64,
    rho: f64,
    nu: f64,
    seed: u64,
    replicate: u64,
) -> PyResult<Vec<f64>> {
    let design = design(locations)?;
    let params = MaternParams::new(sigma2, rho, nu).map_err(to_py)?;
    let deviates = RngStream::new(seed, replicate).standard_normals(design.len());
    let field = FieldSimulator::new(&design, &params)
        .and_then(|s| s.simulate(&deviates))
        .map_err(to_py)?;
    Ok(field.as_slice().to_vec())
}

/// Runs the Monte Carlo study from a JSON config; returns the report as JSON.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let config: ExperimentConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| maternkit::run_experiment(&config)).map_err(to_py)?;
    Ok(report.to_json())
}

/// Runs the built-in invariant suites; returns `(passed, lines)`.
#[pyfunction]
#[pyo3(signature = (seed = 1, cases = 200))]
fn verify(seed: u64, cases: usize) -> (bool, Vec<String>) {
    let report = run_verify(&VerifyOptions {
        seed,
        cases,
        inject_mspe_sign_error: false,
    });
    let lines = report.suites.iter().map(ToString::to_string).collect();
    (report.passed(), lines)
}

#[pymodule]
fn maternkit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFitResult>()?;
    m.add_class::<PyKriger>()?;
    m.add_function(wrap_pyfunction!(matern_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(effective_range_to_rho, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mle, m)?)?;
    m.add_function(wrap_pyfunction!(fit_fixed_rho, m)?)?;
    m.add_function(wrap_pyfunction!(fit_tapered, m)?)?;
    m.add_function(wrap_pyfunction!(microergodic_estimate, m)?)?;
    m.add_function(wrap_pyfunction!(krig_predict, m)?)?;
    m.add_function(wrap_pyfunction!(naive_mspe, m)?)?;
    m.add_function(wrap_pyfunction!(true_mspe, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_field, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
