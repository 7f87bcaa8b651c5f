//! Python bindings: `import snippet_smc`.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use core_lib::adaptation;
use core_lib::cli::{self, RunConfig};
use core_lib::models::{self, GaussianTarget, LogisticRegressionTarget};
use core_lib::{PhaseState, RandomStream, TemperedTarget};

fn py_err(e: core_lib::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Outcome of one replication of `run`.
#[pyclass(frozen, get_all, module = "snippet_smc")]
struct RunResult {
    replication: usize,
    log_z: f64,
    posterior_mean: Vec<f64>,
    iterations: usize,
    gradient_evaluations: u64,
    final_gamma: f64,
    final_theta: Option<f64>,
    final_t: usize,
    trace: String,
}

#[pymethods]
impl RunResult {
    fn __repr__(&self) -> String {
        format!(
            "RunResult(replication={}, log_z={:.6}, iterations={}, gradient_evaluations={})",
            self.replication, self.log_z, self.iterations, self.gradient_evaluations
        )
    }
}

/// Run a JSON config (same schema as the CLI) and write traces to `out_dir`.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir, seed=None))]
fn run(py: Python<'_>, config_json: &str, out_dir: PathBuf, seed: Option<u64>) -> PyResult<Vec<RunResult>> {
    let mut cfg: RunConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let summaries = py.detach(|| cli::run_config(&cfg, &out_dir)).map_err(py_err)?;
    Ok(summaries
        .into_iter()
        .map(|s| RunResult {
            replication: s.replication,
            log_z: s.log_z,
            posterior_mean: s.posterior_mean,
            iterations: s.iterations,
            gradient_evaluations: s.gradient_evaluations,
            final_gamma: s.final_gamma,
            final_theta: s.final_theta,
            final_t: s.final_t,
            trace: s.trace.display().to_string(),
        })
        .collect())
}

/// Exact Hamiltonian flow for `N(0, diag(variances))` after time `t`.
#[pyfunction]
fn exact_gaussian_flow(variances: Vec<f64>, t: f64, x: Vec<f64>, v: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let g = GaussianTarget::new(variances).map_err(py_err)?;
    let z = PhaseState::new(x, v).map_err(py_err)?;
    if z.dim() != g.dim() {
        return Err(PyValueError::new_err("state and variances differ in dimension"));
    }
    let out = models::exact_gaussian_flow(&g, t, &z);
    Ok((out.x, out.v))
}

/// Closed-form mean of the inverse Gaussian stepsize law from weighted stepsizes.
#[pyfunction]
#[pyo3(signature = (epsilons, weights, s, previous=1.0))]
fn fit_epsilon_distribution(epsilons: Vec<f64>, weights: Vec<f64>, s: f64, previous: f64) -> PyResult<f64> {
    if epsilons.len() != weights.len() {
        return Err(PyValueError::new_err("epsilons and weights differ in length"));
    }
    let pairs: Vec<(f64, f64)> = epsilons.into_iter().zip(weights).collect();
    adaptation::fit_epsilon_distribution(&pairs, s, previous).map_err(py_err)
}

/// `count` stepsize draws with mean `theta` and coefficient of variation `s/3`.
#[pyfunction]
fn sample_epsilon(theta: f64, s: f64, count: usize, seed: u64) -> PyResult<Vec<f64>> {
    adaptation::EpsilonDistribution::new(theta, s).map_err(py_err)?;
    let mut rng = RandomStream::new(seed);
    Ok((0..count).map(|_| adaptation::sample_epsilon(theta, s, &mut rng)).collect())
}

/// Next inverse temperature from seed log-likelihoods; returns `(gamma, ess)`.
#[pyfunction]
#[pyo3(signature = (logliks, gamma, ess_target=0.8, tol=1e-10))]
fn next_gamma(logliks: Vec<f64>, gamma: f64, ess_target: f64, tol: f64) -> PyResult<(f64, f64)> {
    let c = adaptation::next_gamma_linear(&logliks, gamma, ess_target, tol).map_err(py_err)?;
    Ok((c.gamma, c.ess))
}

/// Bayesian logistic regression loaded from a Sonar-format CSV.
#[pyclass(frozen, module = "snippet_smc")]
struct LogisticModel {
    inner: LogisticRegressionTarget,
}

#[pymethods]
impl LogisticModel {
    #[new]
    fn new(path: PathBuf) -> PyResult<Self> {
        Ok(LogisticModel { inner: models::load_sonar(path).map_err(py_err)? })
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.inner.n_obs()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn log_density(&self, x: Vec<f64>, gamma: f64) -> PyResult<f64> {
        self.check(&x)?;
        Ok(self.inner.log_density(&x, gamma))
    }

    fn grad_log_density(&self, x: Vec<f64>, gamma: f64) -> PyResult<Vec<f64>> {
        self.check(&x)?;
        let mut g = vec![0.0; x.len()];
        self.inner.grad_log_density(&x, gamma, &mut g);
        Ok(g)
    }
}

impl LogisticModel {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.dim() {
            return Err(PyValueError::new_err(format!("expected {} coefficients, got {}", self.inner.dim(), x.len())));
        }
        Ok(())
    }
}

/// Run the oracle suite; returns `(all_passed, report)`.
#[pyfunction]
fn verify(py: Python<'_>) -> (bool, String) {
    let r = py.detach(cli::verify::run_verification);
    (r.all_passed(), r.to_string())
}

#[pymodule]
fn snippet_smc(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<RunResult>()?;
    m.add_class::<LogisticModel>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(exact_gaussian_flow, m)?)?;
    m.add_function(wrap_pyfunction!(fit_epsilon_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(sample_epsilon, m)?)?;
    m.add_function(wrap_pyfunction!(next_gamma, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
