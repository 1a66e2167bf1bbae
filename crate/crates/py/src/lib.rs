//! Python bindings. Fields cross the boundary as flat lists plus a shape.

use anchor_core::error::AnchorError;
use anchor_core::estimator::{self, EstimatorState, ThresholdPolicy};
use anchor_core::experiment::{self, ExperimentConfig, Sample, SampleSummary, Split};
use anchor_core::grid::FieldState;
use anchor_core::ic;
use anchor_core::metrics;
use anchor_core::pde::PdeKind;
use anchor_core::record::{replay_gate, Engine, RolloutRecord};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: AnchorError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn json_to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn config(pde: &str, overrides: Option<&str>) -> PyResult<ExperimentConfig> {
    let kind: PdeKind = pde.parse().map_err(err)?;
    let mut layers = vec![serde_json::json!({ "pde": kind })];
    if let Some(o) = overrides {
        layers.push(serde_json::from_str(o).map_err(|e| PyValueError::new_err(e.to_string()))?);
    }
    ExperimentConfig::from_layers(&layers).map_err(err)
}

/// Exponential moving average of normalized residuals.
#[pyclass(name = "Estimator")]
struct PyEstimator {
    inner: EstimatorState,
}

#[pymethods]
impl PyEstimator {
    #[new]
    fn new(a: f64) -> PyResult<Self> {
        Ok(PyEstimator { inner: EstimatorState::new(a).map_err(err)? })
    }

    fn update(&mut self, r_hat: f64) -> f64 {
        self.inner = estimator::ema_update(&self.inner, r_hat);
        self.inner.eta
    }

    #[getter]
    fn eta(&self) -> f64 {
        self.inner.eta
    }

    #[getter]
    fn initialized(&self) -> bool {
        self.inner.initialized
    }

    fn __repr__(&self) -> String {
        format!("Estimator(a={}, eta={})", self.inner.a, self.inner.eta)
    }
}

/// One EMA step from explicit state.
#[pyfunction]
#[pyo3(signature = (a, eta, r_hat, initialized = true))]
fn ema_update(a: f64, eta: f64, r_hat: f64, initialized: bool) -> PyResult<f64> {
    let s = EstimatorState { eta, initialized, ..EstimatorState::new(a).map_err(err)? };
    Ok(estimator::ema_update(&s, r_hat).eta)
}

#[pyfunction]
fn threshold_at(u0max: f64, gamma: f64, t: f64) -> PyResult<f64> {
    Ok(estimator::threshold_at(&ThresholdPolicy::new(u0max, gamma).map_err(err)?, t))
}

#[pyfunction]
fn pearson(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    metrics::pearson(&x, &y).map_err(err)
}

/// Engine tags implied by recorded estimator and threshold series.
#[pyfunction]
#[pyo3(signature = (eta, threshold, k = 10))]
fn replay(eta: Vec<f64>, threshold: Vec<f64>, k: usize) -> PyResult<Vec<&'static str>> {
    if eta.len() != threshold.len() {
        return Err(PyValueError::new_err("eta and threshold differ in length"));
    }
    Ok(replay_gate(&eta, &threshold, k, Engine::Surrogate).into_iter().map(Engine::as_str).collect())
}

fn field_dict<'py>(py: Python<'py>, f: &FieldState) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("shape", f.grid.shape())?;
    d.set_item("time", f.time)?;
    d.set_item("values", f.values.clone())?;
    Ok(d)
}

/// Benchmark initial condition for `pde` from the given RNG stream.
#[pyfunction]
#[pyo3(signature = (pde, seed = 7, stream = 0))]
fn sample_ic<'py>(py: Python<'py>, pde: &str, seed: u64, stream: u64) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(pde, None)?;
    let spec = cfg.pde_spec().map_err(err)?;
    let f = ic::sample_ic(&ic::IcSpec { seed, ..cfg.ic.with_stream(stream) }, &spec.grid).map_err(err)?;
    let d = field_dict(py, &f)?;
    d.set_item("u0_max", ic::u0_max(&f).map_err(err)?)?;
    Ok(d)
}

fn record_dict<'py>(py: Python<'py>, r: &RolloutRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("times", r.times())?;
    d.set_item("engines", r.engines.iter().map(|e| e.as_str()).collect::<Vec<_>>())?;
    d.set_item("eta", r.eta.clone())?;
    d.set_item("threshold", r.threshold.clone())?;
    d.set_item("rel_l2", r.rel_l2.clone())?;
    d.set_item("seconds", r.total_seconds())?;
    Ok(d)
}

/// Solver, surrogate and ANCHOR rollouts from one test initial condition.
/// `overrides` is a JSON object layered over the benchmark configuration.
#[pyfunction]
#[pyo3(signature = (pde, index = 0, overrides = None))]
fn compare<'py>(py: Python<'py>, pde: &str, index: usize, overrides: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config(pde, overrides)?;
    let (summary, outcome) = py
        .detach(|| -> anchor_core::error::Result<_> {
            let fitted = experiment::train_surrogate(&cfg)?;
            let grid = cfg.pde_spec()?.grid;
            let f0 = ic::sample_ic(&cfg.ic_for(Split::Test, index), &grid)?;
            let sample = Sample { index, stream: ExperimentConfig::stream(Split::Test, index), u0_max: ic::u0_max(&f0)?, f0 };
            let mut out = experiment::run_comparisons(&cfg, fitted.stepper.as_ref(), &[sample])?;
            let o = out.pop().expect("one sample")?;
            Ok((SampleSummary::from_outcome(&o, cfg.train_horizon), o))
        })
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("summary", json_to_py(py, &summary)?)?;
    d.set_item("reference", record_dict(py, &outcome.report.reference)?)?;
    d.set_item("surrogate", record_dict(py, &outcome.report.surrogate)?)?;
    d.set_item("anchor", record_dict(py, &outcome.report.anchor)?)?;
    Ok(d)
}

/// Full in-memory benchmark for one PDE; returns the run summary.
#[pyfunction]
#[pyo3(name = "bench", signature = (pde, overrides = None))]
fn run_bench<'py>(py: Python<'py>, pde: &str, overrides: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config(pde, overrides)?;
    let outcome = py.detach(|| experiment::bench(&cfg, false)).map_err(err)?;
    json_to_py(py, &outcome.summary)
}

/// Default configuration for `pde` as a dict.
#[pyfunction]
fn default_config<'py>(py: Python<'py>, pde: &str) -> PyResult<Bound<'py, PyAny>> {
    json_to_py(py, &config(pde, None)?)
}

#[pymodule]
fn anchor(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEstimator>()?;
    m.add_function(wrap_pyfunction!(ema_update, m)?)?;
    m.add_function(wrap_pyfunction!(threshold_at, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(replay, m)?)?;
    m.add_function(wrap_pyfunction!(sample_ic, m)?)?;
    m.add_function(wrap_pyfunction!(compare, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    Ok(())
}
