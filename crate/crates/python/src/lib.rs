//! Python bindings: estimators, instances, subset selection and experiments.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use banditlab::confidence::{beta_radius as beta, ConfidenceParams, EstimatorState};
use banditlab::coreset;
use banditlab::environment::{ActionSpaceSpec, ProtectedInstance};
use banditlab::harness::{self, ExperimentConfig, RegretTrace, TraceRecord};
use banditlab::instances;
use banditlab::linalg::{self, SymMatrix};
use banditlab::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Parse { .. } | Error::Json(_) | Error::Capacity { .. } => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Orthonormal basis of the span of `vectors`.
#[pyfunction]
#[pyo3(signature = (vectors, rank_tol = linalg::RANK_TOL))]
fn orth_basis(vectors: Vec<Vec<f64>>, rank_tol: f64) -> PyResult<Vec<Vec<f64>>> {
    linalg::orth_basis(&vectors, rank_tol).map_err(to_py)
}

/// Component of `x` orthogonal to the span of `vectors`.
#[pyfunction]
fn proj_orth_complement(vectors: Vec<Vec<f64>>, x: Vec<f64>) -> PyResult<Vec<f64>> {
    linalg::proj_orth_complement(&vectors, &x).map_err(to_py)
}

/// Smallest eigenvalue of a symmetric matrix given by rows.
#[pyfunction]
fn min_eigenvalue(rows: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = SymMatrix::from_rows(&rows).map_err(to_py)?;
    linalg::min_eigenvalue(&m).map_err(to_py)
}

/// Squared confidence radius after `count` observations.
#[pyfunction]
#[pyo3(signature = (count, noise, norm_bound, delta, dim, rho))]
fn beta_radius(count: u64, noise: f64, norm_bound: f64, delta: f64, dim: usize, rho: f64) -> PyResult<f64> {
    let params = ConfidenceParams::new(noise, norm_bound, delta, dim).map_err(to_py)?;
    if !(rho > 0.0) {
        return Err(PyValueError::new_err("rho must be > 0"));
    }
    Ok(beta(count, &params, rho))
}

/// `(subset, score)` maximising the smallest eigenvalue over size-k subsets (1-based).
#[pyfunction]
fn best_subset(estimates: Vec<Vec<f64>>, k: usize) -> PyResult<(Vec<usize>, f64)> {
    let s = coreset::best_subset(&estimates, k).map_err(to_py)?;
    Ok((s.subset, s.score))
}

/// Runs an experiment from a JSON config string. Returns
/// `[(run_id, cumulative_regret, error), ...]`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config_json: &str) -> PyResult<Vec<(usize, Vec<f64>, Option<String>)>> {
    let cfg = ExperimentConfig::from_json(config_json).map_err(to_py)?;
    let traces = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    Ok(traces
        .into_iter()
        .map(|t| (t.run_id, t.cumulative(), t.error))
        .collect())
}

/// Per-round `(t, mean, std)` over equally long cumulative-regret curves.
#[pyfunction]
fn aggregate(curves: Vec<Vec<f64>>) -> PyResult<Vec<(u64, f64, f64)>> {
    let traces: Vec<RegretTrace> = curves
        .into_iter()
        .enumerate()
        .map(|(run_id, c)| RegretTrace {
            run_id,
            records: c
                .into_iter()
                .enumerate()
                .map(|(k, cum)| TraceRecord {
                    t: k as u64 + 1,
                    index: 0,
                    feedback: 0.0,
                    instant_regret: 0.0,
                    cum_regret: cum,
                    arm: Vec::new(),
                })
                .collect(),
            coreset: None,
            wall_clock_secs: 0.0,
            error: None,
        })
        .collect();
    Ok(harness::aggregate(&traces)
        .map_err(to_py)?
        .into_iter()
        .map(|r| (r.t, r.mean, r.std))
        .collect())
}

/// Ridge estimator with confidence-ellipsoid queries.
#[pyclass(name = "Estimator")]
struct PyEstimator {
    inner: EstimatorState,
}

#[pymethods]
impl PyEstimator {
    #[new]
    fn new(dim: usize, rho: f64) -> PyResult<Self> {
        Ok(Self {
            inner: EstimatorState::new(dim, rho).map_err(to_py)?,
        })
    }

    fn update(&mut self, arm: Vec<f64>, feedback: f64) -> PyResult<()> {
        self.inner.update(&arm, feedback).map_err(to_py)
    }

    fn mle(&self) -> Vec<f64> {
        self.inner.mle().to_vec()
    }

    fn exploration_width(&self, arm: Vec<f64>) -> f64 {
        self.inner.exploration_width(&arm)
    }

    fn distance(&self, theta: Vec<f64>) -> f64 {
        self.inner.distance(&theta)
    }

    #[getter]
    fn count(&self) -> u64 {
        self.inner.count()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }
}

/// A protected linear bandit instance.
#[pyclass(name = "Instance")]
struct PyInstance {
    inner: ProtectedInstance,
}

#[pymethods]
impl PyInstance {
    #[staticmethod]
    #[pyo3(signature = (d, l, s, m, r, seed, resampled_arms = None))]
    fn synthetic(d: usize, l: usize, s: usize, m: f64, r: f64, seed: u64, resampled_arms: Option<usize>) -> PyResult<Self> {
        let space = match resampled_arms {
            Some(count) => ActionSpaceSpec::FiniteResampled { count, seed },
            None => ActionSpaceSpec::UnitBall,
        };
        Ok(Self {
            inner: instances::gen_synthetic(d, l, s, m, r, seed, space).map_err(to_py)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (horizon, which, seed = 0))]
    fn lower_bound(horizon: u64, which: u8, seed: u64) -> PyResult<Self> {
        let pair = instances::gen_lower_bound(horizon, seed).map_err(to_py)?;
        let inner = match which {
            1 => pair.instance1,
            2 => pair.instance2,
            _ => return Err(PyValueError::new_err("which must be 1 or 2")),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn example1() -> Self {
        Self {
            inner: instances::gen_example1(),
        }
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ProtectedInstance::from_json(text).map_err(to_py)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(to_py)
    }

    fn theta_perp(&self) -> Vec<f64> {
        self.inner.theta_perp().to_vec()
    }

    fn reward(&self, arm: Vec<f64>) -> f64 {
        self.inner.reward(&arm)
    }

    #[getter]
    fn theta0(&self) -> Vec<f64> {
        self.inner.theta0().to_vec()
    }

    #[getter]
    fn protected(&self) -> Vec<Vec<f64>> {
        self.inner.protected().to_vec()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn __repr__(&self) -> String {
        format!(
            "Instance(d={}, L={}, s={}, R={})",
            self.inner.dim(),
            self.inner.num_protected(),
            self.inner.subspace_dim(),
            self.inner.noise()
        )
    }
}

#[pymodule]
#[pyo3(name = "banditlab")]
fn banditlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(orth_basis, m)?)?;
    m.add_function(wrap_pyfunction!(proj_orth_complement, m)?)?;
    m.add_function(wrap_pyfunction!(min_eigenvalue, m)?)?;
    m.add_function(wrap_pyfunction!(beta_radius, m)?)?;
    m.add_function(wrap_pyfunction!(best_subset, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate, m)?)?;
    m.add_class::<PyEstimator>()?;
    m.add_class::<PyInstance>()?;
    Ok(())
}
