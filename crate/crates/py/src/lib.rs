//! Python bindings. Matrices cross the boundary as lists of rows.

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use fusionest::fusion::{self, LocalErrorMap, NoiseLayout};
use fusionest::harness::{self, Experiment, ExperimentConfig, Method};
use fusionest::linear::{self, LocalSystem};
use fusionest::models::NoiseKind;
use fusionest::nonlinear::{self, LinearizedSystem};

type Rows = Vec<Vec<f64>>;

fn to_py_err(e: fusionest::Error) -> PyErr {
    match e {
        fusionest::Error::Config(_) | fusionest::Error::Shape(_) => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Converts a list of rows to a matrix; an empty list is a `0 × 0` matrix.
pub fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err("ragged matrix rows".into());
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

fn mat(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    matrix(rows).map_err(PyValueError::new_err)
}

fn noise_kind(n: u8) -> PyResult<NoiseKind> {
    match n {
        1 => Ok(NoiseKind::TypeI),
        2 => Ok(NoiseKind::TypeII),
        3 => Ok(NoiseKind::TypeIII),
        4 => Ok(NoiseKind::TypeIV),
        0 => Ok(NoiseKind::Zero),
        _ => Err(PyValueError::new_err(format!("noise type must be 0 to 4, got {n}"))),
    }
}

/// Experiment configuration.
#[pyclass(name = "Config", module = "fusionest", from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Tracking experiment; noise type 1, 2, 3, or 0 for noise-free.
    #[staticmethod]
    #[pyo3(signature = (noise_type = 3, horizon = 100, seed = 42, runs = 100))]
    fn tracking(noise_type: u8, horizon: usize, seed: u64, runs: usize) -> PyResult<Self> {
        let mut inner = ExperimentConfig::tracking(noise_kind(noise_type)?, horizon, seed);
        inner.runs = runs;
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    /// Robot experiment with Type IV noise (or noise-free when `noise_free`).
    #[staticmethod]
    #[pyo3(signature = (horizon = 120, seed = 42, runs = 100, noise_free = false))]
    fn robot(horizon: usize, seed: u64, runs: usize, noise_free: bool) -> PyResult<Self> {
        let mut inner = ExperimentConfig::robot(horizon, seed);
        inner.runs = runs;
        if noise_free {
            inner.noise = NoiseKind::Zero;
        }
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        let inner: ExperimentConfig =
            toml::from_str(text).map_err(|e| PyValueError::new_err(format!("invalid config: {e}")))?;
        inner.validate().map_err(to_py_err)?;
        Ok(Self { inner })
    }

    fn to_toml(&self) -> PyResult<String> {
        toml::to_string(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))
    }

    #[getter]
    fn experiment(&self) -> &'static str {
        match self.inner.experiment {
            Experiment::Tracking => "tracking",
            Experiment::Robot => "robot",
        }
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon
    }

    #[setter]
    fn set_horizon(&mut self, v: usize) {
        self.inner.horizon = v;
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, v: u64) {
        self.inner.seed = v;
    }

    #[getter]
    fn runs(&self) -> usize {
        self.inner.runs
    }

    #[setter]
    fn set_runs(&mut self, v: usize) {
        self.inner.runs = v;
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(experiment={:?}, noise={:?}, horizon={}, seed={}, runs={})",
            self.experiment(),
            self.inner.noise,
            self.inner.horizon,
            self.inner.seed,
            self.inner.runs
        )
    }
}

/// Local gain for `x⁺ = Ax + Bw`, `y = Cx + B_s v`.
#[pyfunction]
fn design_local_gain<'py>(
    py: Python<'py>,
    a: Rows,
    b: Rows,
    c: Rows,
    b_sensor: Rows,
) -> PyResult<Bound<'py, PyDict>> {
    let sys = LocalSystem {
        a: mat(&a)?,
        b: mat(&b)?,
        c: mat(&c)?,
        b_sensor: mat(&b_sensor)?,
    };
    let r = linear::design_local_gain(&sys).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("k", rows(&r.k))?;
    d.set_item("p", rows(&r.p))?;
    d.set_item("theta", rows(&r.theta))?;
    d.set_item("vartheta", r.vartheta)?;
    d.set_item("objective", r.objective)?;
    d.set_item("status", format!("{:?}", r.status))?;
    d.set_item("certified", r.certified)?;
    d.set_item("contraction", sys.contraction(&r.k))?;
    Ok(d)
}

/// Local gain for a linearized model with Jacobians `A_J`, `C_J`.
#[pyfunction]
fn design_nonlinear_gain<'py>(
    py: Python<'py>,
    a_j: Rows,
    c_j: Rows,
    b: Rows,
    b_sensor: Rows,
) -> PyResult<Bound<'py, PyDict>> {
    let sys = LinearizedSystem {
        a_j: mat(&a_j)?,
        c_j: mat(&c_j)?,
        b: mat(&b)?,
        b_sensor: mat(&b_sensor)?,
    };
    let r = nonlinear::design_nonlinear_gain(&sys).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("k", rows(&r.k))?;
    d.set_item("pi", rows(&r.pi))?;
    d.set_item("upsilon", rows(&r.upsilon))?;
    d.set_item("m", rows(&r.m))?;
    d.set_item("psi", rows(&r.psi))?;
    d.set_item("eta", r.eta)?;
    d.set_item("objective", r.objective)?;
    d.set_item("status", format!("{:?}", r.status))?;
    d.set_item("certified", r.certified)?;
    d.set_item("contraction", sys.contraction(&r.k))?;
    Ok(d)
}

/// Fusion weights for local estimators given as `(K, A, B, C, B_s)` tuples.
#[pyfunction]
#[pyo3(signature = (locals, layout = "linear"))]
fn solve_fusion_weights<'py>(
    py: Python<'py>,
    locals: Vec<(Rows, Rows, Rows, Rows, Rows)>,
    layout: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let layout = match layout {
        "linear" => NoiseLayout::LinearShared,
        "nonlinear" => NoiseLayout::NonlinearPerSensor,
        other => return Err(PyValueError::new_err(format!("layout must be 'linear' or 'nonlinear', got {other:?}"))),
    };
    let maps = locals
        .iter()
        .map(|(k, a, b, c, bs)| Ok(LocalErrorMap::new(&mat(k)?, &mat(a)?, &mat(b)?, &mat(c)?, &mat(bs)?)))
        .collect::<PyResult<Vec<_>>>()?;
    let sys = fusion::build_stacked(&maps, layout).map_err(to_py_err)?;
    let w = fusion::solve_fusion_weights(&sys).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("omegas", w.omegas.iter().map(rows).collect::<Vec<_>>())?;
    d.set_item("p", rows(&w.p))?;
    d.set_item("theta", rows(&w.theta))?;
    d.set_item("upsilon", rows(&w.upsilon))?;
    d.set_item("objective", w.objective)?;
    d.set_item("status", format!("{:?}", w.status))?;
    d.set_item("certified", w.certified)?;
    Ok(d)
}

/// `Σ Ω_i x̂_i`.
#[pyfunction]
fn fuse(omegas: Vec<Rows>, estimates: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    let omegas = omegas.iter().map(|o| mat(o)).collect::<PyResult<Vec<_>>>()?;
    let estimates: Vec<DVector<f64>> = estimates.into_iter().map(DVector::from_vec).collect();
    if omegas.iter().zip(&estimates).any(|(o, x)| o.ncols() != x.len()) {
        return Err(PyValueError::new_err("weight and estimate dimensions differ"));
    }
    let x = fusion::fuse(&omegas, &estimates).map_err(to_py_err)?;
    Ok(x.iter().copied().collect())
}

/// Runs the experiment (run 0) and returns per-step metrics and trajectories.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &PyConfig) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let run = py
        .detach(|| match cfg.experiment {
            Experiment::Tracking => harness::run_linear_experiment(cfg).map(|e| e.run),
            Experiment::Robot => harness::run_nonlinear_experiment(cfg).map(|r| r.output),
        })
        .map_err(to_py_err)?;
    let steps = &run.series.steps;
    let d = PyDict::new(py);
    d.set_item("t", steps.iter().map(|s| s.t).collect::<Vec<_>>())?;
    d.set_item("se_lse", steps.iter().map(|s| s.se_lse.clone()).collect::<Vec<_>>())?;
    d.set_item("se_dfe", steps.iter().map(|s| s.se_dfe).collect::<Vec<_>>())?;
    d.set_item("obj_local", steps.iter().map(|s| s.obj_local.clone()).collect::<Vec<_>>())?;
    d.set_item("obj_fusion", steps.iter().map(|s| s.obj_fusion).collect::<Vec<_>>())?;
    d.set_item("jd", steps.iter().map(|s| s.jd.clone()).collect::<Vec<_>>())?;
    d.set_item("infeasible_flags", steps.iter().map(|s| s.infeasible_flags).collect::<Vec<_>>())?;
    let vecs = |xs: &[DVector<f64>]| xs.iter().map(|x| x.iter().copied().collect::<Vec<_>>()).collect::<Vec<_>>();
    d.set_item("states", vecs(&run.record.states))?;
    d.set_item("fused", vecs(&run.fused))?;
    d.set_item("local", run.local.iter().map(|e| vecs(e)).collect::<Vec<_>>())?;
    Ok(d)
}

/// Monte Carlo PMSE curves; `methods` are labels such as `lse_1`, `dfe`,
/// `kf_1`, `kf_1_q10_r0.1`, `ekf_1`, `ukf_1`.
#[pyfunction]
#[pyo3(signature = (config, methods = None))]
fn monte_carlo_pmse<'py>(
    py: Python<'py>,
    config: &PyConfig,
    methods: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = &config.inner;
    let methods = match methods {
        Some(labels) => labels
            .iter()
            .map(|l| Method::from_label(l))
            .collect::<fusionest::Result<Vec<_>>>()
            .map_err(to_py_err)?,
        None => harness::default_methods(cfg),
    };
    let table = py.detach(|| harness::monte_carlo_pmse(cfg, &methods)).map_err(to_py_err)?;
    let d = PyDict::new(py);
    d.set_item("methods", table.methods.clone())?;
    d.set_item("rows", table.rows.clone())?;
    d.set_item("runs", table.runs)?;
    let averages = PyDict::new(py);
    for m in &table.methods {
        averages.set_item(m, table.time_average(m))?;
    }
    d.set_item("time_average", averages)?;
    Ok(d)
}

/// Runs the consistency suites; returns `(passed, report)`.
#[pyfunction]
fn selftest(py: Python<'_>) -> (bool, String) {
    let report = py.detach(fusionest::selftest::run_all);
    (report.passed(), report.to_string())
}

/// Distributed fusion estimation under unknown bounded noise.
#[pymodule(name = "fusionest")]
mod fusionest_module {
    #[pymodule_export]
    use super::{
        design_local_gain, design_nonlinear_gain, fuse, monte_carlo_pmse, run_experiment, selftest,
        solve_fusion_weights, PyConfig,
    };
}
