//! Python bindings: reactions, front speeds, lag fits, Hausdorff distances and scenario runs.
//!
//! Structured results (verdicts, reports) come back as plain dicts and lists.

use std::path::Path;

use frontlab::analysis::{self, LagMode};
use frontlab::front;
use frontlab::pde::Scheme;
use frontlab::reaction::ReactionSpec;
use frontlab::scenario::{self, ScenarioConfig};
use frontlab::support;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match n.as_i64() {
            Some(i) => i.into_pyobject(py)?.into_any(),
            None => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let l = PyList::empty(py);
            for x in a {
                l.append(to_py(py, x)?)?;
            }
            l.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn serialize<'py, T: serde::Serialize>(py: Python<'py>, x: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(x).map_err(runtime_err)?)
}

/// A reaction term `f(u)`.
#[pyclass(name = "Reaction", module = "frontlab_py", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyReaction {
    inner: ReactionSpec,
}

#[pymethods]
impl PyReaction {
    #[staticmethod]
    fn logistic() -> Self {
        PyReaction {
            inner: ReactionSpec::logistic(),
        }
    }

    #[staticmethod]
    fn bistable(a: f64) -> PyResult<Self> {
        Ok(PyReaction {
            inner: ReactionSpec::bistable(a).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn ignition(theta: f64) -> PyResult<Self> {
        Ok(PyReaction {
            inner: ReactionSpec::ignition(theta).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn power_kpp(p: f64) -> PyResult<Self> {
        Ok(PyReaction {
            inner: ReactionSpec::power_kpp(p).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn tristable(a: f64, b: f64, g: f64, amp_low: f64, amp_high: f64) -> PyResult<Self> {
        Ok(PyReaction {
            inner: ReactionSpec::tristable(a, b, g, amp_low, amp_high).map_err(value_err)?,
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyReaction {
            inner: serde_json::from_str(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("reaction serializes")
    }

    fn __call__(&self, u: f64) -> f64 {
        self.inner.eval(u)
    }

    fn derivative_at_zero(&self) -> f64 {
        self.inner.derivative_at_zero()
    }

    /// `2√f'(0)`; raises for reactions outside the KPP class.
    fn kpp_speed(&self) -> PyResult<f64> {
        front::kpp_minimal_speed(&self.inner).map_err(value_err)
    }

    /// Front speed and profile by shooting: `(c, z, phi)`.
    #[pyo3(signature = (tol = 1e-10))]
    fn shoot(&self, tol: f64) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
        let (c, p) = front::shoot_front_speed(&self.inner, tol).map_err(value_err)?;
        Ok((c, p.z, p.phi))
    }

    fn __repr__(&self) -> String {
        format!("Reaction({})", self.to_json())
    }
}

/// Speed of the linearized explicit scheme on a lattice of spacing `h` with step `dt`.
#[pyfunction]
#[pyo3(signature = (f0, h, dt, theta = 0.0))]
fn discrete_kpp_speed(f0: f64, h: f64, dt: f64, theta: f64) -> f64 {
    analysis::discrete_kpp_speed_along(f0, h, dt, Scheme::ExplicitEuler, theta)
}

/// Fit `X(t) = c t − k log t − b` over `window`; `mode` is "fix_speed" or "fit_all".
#[pyfunction]
#[pyo3(signature = (times, xs, mode = "fix_speed", c = 2.0, window = None))]
fn fit_lag<'py>(
    py: Python<'py>,
    times: Vec<f64>,
    xs: Vec<f64>,
    mode: &str,
    c: f64,
    window: Option<(f64, f64)>,
) -> PyResult<Bound<'py, PyAny>> {
    let mode = match mode {
        "fix_speed" => LagMode::FixSpeed,
        "fit_all" => LagMode::FitAll,
        other => return Err(value_err(format!("unknown mode {other}"))),
    };
    let w = window.unwrap_or_else(|| analysis::default_window(times.last().copied().unwrap_or(0.0)));
    let fit = analysis::fit_lag_xy(&times, &xs, mode, c, w).map_err(value_err)?;
    serialize(py, &fit)
}

/// Symmetric Hausdorff distance between two point clouds given as `[(x, y), ...]`.
#[pyfunction]
fn hausdorff(a: Vec<[f64; 2]>, b: Vec<[f64; 2]>) -> f64 {
    support::hausdorff(&a, &b)
}

#[pyfunction]
#[pyo3(signature = (root = None))]
fn list_presets<'py>(py: Python<'py>, root: Option<String>) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &scenario::list_presets(root.as_deref().map(Path::new)))
}

/// Config of a preset as a JSON string (one entry per run).
#[pyfunction]
fn preset_config(id: &str) -> PyResult<String> {
    let plan = scenario::preset_plan(id).map_err(value_err)?;
    serde_json::to_string_pretty(&plan.configs).map_err(runtime_err)
}

/// Runs a preset under `root/<id>`; returns its verdicts.
#[pyfunction]
fn run_preset<'py>(py: Python<'py>, id: &str, root: &str) -> PyResult<Bound<'py, PyAny>> {
    let rep = py.detach(|| scenario::run_preset(id, Path::new(root))).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("id", &rep.id)?;
    d.set_item("passed", rep.passed())?;
    d.set_item("verdicts", serialize(py, &rep.verdicts)?)?;
    d.set_item("wall_seconds", rep.wall_seconds)?;
    Ok(d.into_any())
}

/// Runs a JSON scenario config into `dir`; returns verdicts and details.
#[pyfunction]
fn run_config<'py>(py: Python<'py>, config_json: &str, dir: &str) -> PyResult<Bound<'py, PyAny>> {
    let cfg = ScenarioConfig::from_json(config_json).map_err(value_err)?;
    let out = py.detach(|| scenario::run_scenario(&cfg, Path::new(dir))).map_err(runtime_err)?;
    let d = PyDict::new(py);
    d.set_item("passed", out.passed())?;
    d.set_item("digest", &out.digest)?;
    d.set_item("verdicts", serialize(py, &out.verdicts)?)?;
    d.set_item("details", serialize(py, &out.details)?)?;
    Ok(d.into_any())
}

#[pyfunction]
fn verify<'py>(py: Python<'py>, dir: &str) -> PyResult<Bound<'py, PyAny>> {
    serialize(py, &scenario::verify(Path::new(dir)).map_err(runtime_err)?)
}

#[pyfunction]
fn emit_plot_data(dir: &str, kind: &str) -> PyResult<String> {
    let p = scenario::emit_plot_data(Path::new(dir), kind).map_err(value_err)?;
    Ok(p.display().to_string())
}

#[pymodule]
fn frontlab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyReaction>()?;
    m.add_function(wrap_pyfunction!(discrete_kpp_speed, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lag, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(list_presets, m)?)?;
    m.add_function(wrap_pyfunction!(preset_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_preset, m)?)?;
    m.add_function(wrap_pyfunction!(run_config, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(emit_plot_data, m)?)?;
    Ok(())
}
