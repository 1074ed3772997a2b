//! Python bindings: Hermite states, quadrature tables, samplers, norms, the
//! truncated flow, the lens transform and the experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use hermite_nls::galerkin::{self, GalerkinConfig, RecordSpec};
use hermite_nls::harness::{self, ExperimentConfig, ExperimentKind};
use hermite_nls::hermite::{self, BasisTable, HermiteState, C64};
use hermite_nls::{lens, norms, random, Error, MeasureParams, SampleSeed};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Integration { .. } | Error::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "BasisTable", frozen)]
struct PyBasisTable {
    inner: BasisTable,
}

#[pymethods]
impl PyBasisTable {
    /// Hermite functions `e_0..e_{n_max−1}` on a Gauss–Hermite grid of
    /// `oversampling·n_max + 1` nodes.
    #[new]
    #[pyo3(signature = (n_max, oversampling = 4))]
    fn new(n_max: usize, oversampling: usize) -> PyResult<Self> {
        Ok(Self { inner: BasisTable::with_oversampling(n_max, oversampling).map_err(py_err)? })
    }

    #[getter]
    fn n_max(&self) -> usize {
        self.inner.n_max()
    }

    #[getter]
    fn n_nodes(&self) -> usize {
        self.inner.n_nodes()
    }

    fn nodes(&self) -> Vec<f64> {
        self.inner.grid().nodes().to_vec()
    }

    /// Quadrature weights for `∫ f dx`.
    fn weights(&self) -> Vec<f64> {
        self.inner.grid().weights().to_vec()
    }

    fn gram_error(&self) -> f64 {
        self.inner.gram_error()
    }

    fn to_grid(&self, u: &PyHermiteState) -> PyResult<Vec<C64>> {
        hermite::to_grid(&u.inner, &self.inner).map_err(py_err)
    }

    fn to_coeffs(&self, values: Vec<C64>, n_modes: usize) -> PyResult<PyHermiteState> {
        Ok(hermite::to_coeffs(&values, &self.inner, n_modes).map_err(py_err)?.into())
    }
}

#[pyclass(name = "HermiteState", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyHermiteState {
    inner: HermiteState,
}

impl From<HermiteState> for PyHermiteState {
    fn from(inner: HermiteState) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyHermiteState {
    #[new]
    fn new(coeffs: Vec<C64>) -> PyResult<Self> {
        Ok(HermiteState::new(coeffs).map_err(py_err)?.into())
    }

    #[staticmethod]
    fn zeros(n_modes: usize) -> Self {
        HermiteState::zeros(n_modes).into()
    }

    #[staticmethod]
    fn unit(n_modes: usize, k: usize) -> Self {
        HermiteState::unit(n_modes, k).into()
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    fn coeffs(&self) -> Vec<C64> {
        self.inner.coeffs().to_vec()
    }

    fn mass(&self) -> f64 {
        self.inner.mass()
    }

    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    /// `e^{−itH} u`.
    fn linear_flow(&self, t: f64) -> Self {
        self.inner.linear_flow(t).into()
    }

    fn resized(&self, n_modes: usize) -> Self {
        self.inner.resized(n_modes).into()
    }

    fn eval_at(&self, points: Vec<f64>) -> Vec<C64> {
        self.inner.eval_at(&points)
    }

    fn __sub__(&self, other: &Self) -> Self {
        self.inner.sub(&other.inner).into()
    }

    fn __add__(&self, other: &Self) -> Self {
        self.inner.add(&other.inner).into()
    }

    fn __len__(&self) -> usize {
        self.inner.n_modes()
    }

    fn __repr__(&self) -> String {
        format!("HermiteState(n_modes={}, l2_norm={:.6e})", self.inner.n_modes(), self.inner.l2_norm())
    }
}

#[pyclass(name = "GalerkinConfig", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGalerkinConfig {
    inner: GalerkinConfig,
}

#[pymethods]
impl PyGalerkinConfig {
    #[new]
    #[pyo3(signature = (p, truncation, n_modes = None, nonlinear_scale = 1.0, dt0 = None, c_dt = None))]
    fn new(
        p: f64,
        truncation: usize,
        n_modes: Option<usize>,
        nonlinear_scale: f64,
        dt0: Option<f64>,
        c_dt: Option<f64>,
    ) -> PyResult<Self> {
        let mut cfg = GalerkinConfig::new(p, truncation);
        if let Some(n) = n_modes {
            cfg = cfg.with_modes(n);
        }
        cfg.nonlinear_scale = nonlinear_scale;
        if let Some(d) = dt0 {
            cfg.dt0 = d;
        }
        if let Some(c) = c_dt {
            cfg.c_dt = c;
        }
        cfg.validate().map_err(py_err)?;
        Ok(Self { inner: cfg })
    }

    #[getter]
    fn p(&self) -> f64 {
        self.inner.p
    }

    #[getter]
    fn truncation(&self) -> usize {
        self.inner.truncation
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes
    }

    fn cutoff_multipliers(&self) -> Vec<f64> {
        galerkin::cutoff_multipliers(&self.inner)
    }
}

#[pyfunction]
fn hermite_functions(x: f64, n_max: usize) -> Vec<f64> {
    hermite::hermite_functions(x, n_max)
}

#[pyfunction]
fn mehler_kernel(x: f64, y: f64, alpha: f64) -> PyResult<f64> {
    hermite::mehler_kernel(x, y, alpha).map_err(py_err)
}

#[pyfunction]
fn mehler_series(x: f64, y: f64, alpha: f64, n_terms: usize) -> f64 {
    hermite::mehler_series(x, y, alpha, n_terms)
}

#[pyfunction]
#[pyo3(signature = (n_modes, seed, index = 0))]
fn sample_mu0(n_modes: usize, seed: u64, index: u64) -> PyHermiteState {
    random::sample_mu0(n_modes, SampleSeed::new(seed, index)).into()
}

#[pyfunction]
#[pyo3(signature = (n_modes, seed, index = 0))]
fn sample_half_convention(n_modes: usize, seed: u64, index: u64) -> PyHermiteState {
    random::sample_half_convention(n_modes, SampleSeed::new(seed, index)).into()
}

/// Draw from the pushed-forward measure; returns `(state, residual, flagged)`.
#[pyfunction]
#[pyo3(signature = (n_modes, seed, basis, index = 0, s = 0.0, alpha = C64::new(1.0, 0.0), beta = 1.0, theta = 0.0))]
#[allow(clippy::too_many_arguments)]
fn sample_muq(
    n_modes: usize,
    seed: u64,
    basis: &PyBasisTable,
    index: u64,
    s: f64,
    alpha: C64,
    beta: f64,
    theta: f64,
) -> PyResult<(PyHermiteState, f64, bool)> {
    let q = MeasureParams::new(s, alpha, beta, theta).map_err(py_err)?;
    let d = random::sample_muq(&q, n_modes, SampleSeed::new(seed, index), &basis.inner).map_err(py_err)?;
    Ok((d.state.into(), d.residual, d.flagged))
}

#[pyfunction]
#[pyo3(signature = (u, t, p, basis, truncation = None))]
fn nu_density(u: &PyHermiteState, t: f64, p: f64, basis: &PyBasisTable, truncation: Option<usize>) -> PyResult<f64> {
    random::nu_density(&u.inner, t, p, truncation, &basis.inner).map_err(py_err)
}

#[pyfunction]
fn lp_norm(u: &PyHermiteState, p: f64, basis: &PyBasisTable) -> PyResult<f64> {
    norms::lp_norm(&u.inner, p, &basis.inner).map_err(py_err)
}

#[pyfunction]
fn sobolev_norm(u: &PyHermiteState, sigma: f64) -> f64 {
    norms::sobolev_norm(&u.inner, sigma)
}

#[pyfunction]
fn weighted_sobolev_norm(u: &PyHermiteState, sigma: f64, p: f64, basis: &PyBasisTable) -> PyResult<f64> {
    norms::weighted_sobolev_norm(&u.inner, sigma, p, &basis.inner).map_err(py_err)
}

/// Besov norm; `q = inf` gives the sup over dyadic blocks.
#[pyfunction]
fn besov_norm(u: &PyHermiteState, sigma: f64, p: f64, q: f64, basis: &PyBasisTable) -> PyResult<f64> {
    norms::besov_norm(&u.inner, norms::BesovSpec { sigma, p, q }, &basis.inner).map_err(py_err)
}

#[pyfunction]
fn block_masses(u: &PyHermiteState) -> Vec<f64> {
    norms::block_masses(&u.inner)
}

/// Integrates the truncated flow from `t0` to `t1`. Returns a dict with the
/// step times, mass, energy, energy-law right-hand side, the final state and
/// the states at the requested checkpoints.
#[pyfunction]
#[pyo3(signature = (u0, t0, t1, config, basis, checkpoints = None))]
fn evolve<'py>(
    py: Python<'py>,
    u0: &PyHermiteState,
    t0: f64,
    t1: f64,
    config: &PyGalerkinConfig,
    basis: &PyBasisTable,
    checkpoints: Option<Vec<f64>>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = RecordSpec { checkpoints: checkpoints.unwrap_or_default(), ..RecordSpec::all() };
    let traj = py
        .detach(|| galerkin::evolve(&u0.inner, t0, t1, &config.inner, &basis.inner, &spec))
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("times", traj.times.clone())?;
    d.set_item("mass", traj.mass.clone())?;
    d.set_item("energy", traj.energy.clone())?;
    d.set_item("energy_rhs", traj.energy_rhs.clone())?;
    d.set_item("truncated_lp", traj.truncated_lp.clone())?;
    let cps: Vec<(f64, PyHermiteState)> =
        traj.checkpoint_states.iter().map(|(t, s)| (*t, s.clone().into())).collect();
    d.set_item("checkpoints", cps)?;
    d.set_item("final", traj.final_state.map(PyHermiteState::from))?;
    Ok(d)
}

#[pyfunction]
fn energy(u: &PyHermiteState, t: f64, config: &PyGalerkinConfig, basis: &PyBasisTable) -> PyResult<f64> {
    galerkin::energy(&u.inner, t, &config.inner, &basis.inner).map_err(py_err)
}

#[pyfunction]
fn energy_derivative_rhs(u: &PyHermiteState, t: f64, config: &PyGalerkinConfig, basis: &PyBasisTable) -> PyResult<f64> {
    galerkin::energy_derivative_rhs(&u.inner, t, &config.inner, &basis.inner).map_err(py_err)
}

#[pyfunction]
fn jacobian_determinant(
    u0: &PyHermiteState,
    t0: f64,
    t1: f64,
    config: &PyGalerkinConfig,
    basis: &PyBasisTable,
) -> PyResult<f64> {
    galerkin::jacobian_determinant(&u0.inner, t0, t1, &config.inner, &basis.inner).map_err(py_err)
}

#[pyfunction]
fn t_of_s(s: f64) -> f64 {
    lens::t_of_s(s)
}

#[pyfunction]
fn s_of_t(t: f64) -> PyResult<f64> {
    lens::s_of_t(t).map_err(py_err)
}

/// NLS-side samples `(y, U(y))` of `𝓛_t^{−1} u`.
#[pyfunction]
fn lens_inverse(u: &PyHermiteState, t: f64, basis: &PyBasisTable) -> PyResult<(Vec<f64>, Vec<C64>)> {
    let g = lens::lens_inverse(&u.inner, t, &basis.inner).map_err(py_err)?;
    Ok((g.y, g.values))
}

/// `(y, (e^{is∂²} u0)(y))`.
#[pyfunction]
fn free_propagate(u0: &PyHermiteState, s: f64, basis: &PyBasisTable) -> PyResult<(Vec<f64>, Vec<C64>)> {
    let g = lens::free_propagate(&u0.inner, s, &basis.inner).map_err(py_err)?;
    Ok((g.y, g.values))
}

#[pyfunction]
fn nls_side_norm(u: &PyHermiteState, t: f64, q: f64, basis: &PyBasisTable) -> PyResult<f64> {
    lens::nls_side_norm(&u.inner, t, q, &basis.inner).map_err(py_err)
}

/// Runs an experiment with its built-in defaults plus `key=value` overrides.
/// Returns `(exit_code, summary_json)`.
#[pyfunction]
#[pyo3(signature = (kind, overrides = Vec::new()))]
fn run_experiment(py: Python<'_>, kind: &str, overrides: Vec<String>) -> PyResult<(i32, String)> {
    let kind: ExperimentKind = serde_json::from_value(serde_json::Value::String(kind.to_string()))
        .map_err(|e| PyValueError::new_err(format!("unknown experiment kind {kind:?}: {e}")))?;
    let cfg = ExperimentConfig::defaults(kind).with_overrides(&overrides).map_err(py_err)?;
    let out = py.detach(|| harness::run(&cfg)).map_err(py_err)?;
    Ok((out.exit_code(), out.summary.to_string()))
}

#[pymodule]
fn hermite_nls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBasisTable>()?;
    m.add_class::<PyHermiteState>()?;
    m.add_class::<PyGalerkinConfig>()?;
    m.add_function(wrap_pyfunction!(hermite_functions, m)?)?;
    m.add_function(wrap_pyfunction!(mehler_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(mehler_series, m)?)?;
    m.add_function(wrap_pyfunction!(sample_mu0, m)?)?;
    m.add_function(wrap_pyfunction!(sample_half_convention, m)?)?;
    m.add_function(wrap_pyfunction!(sample_muq, m)?)?;
    m.add_function(wrap_pyfunction!(nu_density, m)?)?;
    m.add_function(wrap_pyfunction!(lp_norm, m)?)?;
    m.add_function(wrap_pyfunction!(sobolev_norm, m)?)?;
    m.add_function(wrap_pyfunction!(weighted_sobolev_norm, m)?)?;
    m.add_function(wrap_pyfunction!(besov_norm, m)?)?;
    m.add_function(wrap_pyfunction!(block_masses, m)?)?;
    m.add_function(wrap_pyfunction!(evolve, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(energy_derivative_rhs, m)?)?;
    m.add_function(wrap_pyfunction!(jacobian_determinant, m)?)?;
    m.add_function(wrap_pyfunction!(t_of_s, m)?)?;
    m.add_function(wrap_pyfunction!(s_of_t, m)?)?;
    m.add_function(wrap_pyfunction!(lens_inverse, m)?)?;
    m.add_function(wrap_pyfunction!(free_propagate, m)?)?;
    m.add_function(wrap_pyfunction!(nls_side_norm, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
