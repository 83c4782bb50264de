//! Python bindings: grids, model parameters, stationary states, spectral
//! rates and full runs. Run summaries come back as plain dicts.

use std::path::PathBuf;

use fokker_flux as ff;
use fokker_flux::experiments::{self, RunConfig};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: ff::FluxError) -> PyErr {
    let msg = e.to_string();
    match e.class() {
        ff::ErrorClass::Config => PyValueError::new_err(msg),
        ff::ErrorClass::Runtime => PyRuntimeError::new_err(msg),
        ff::ErrorClass::Io => PyOSError::new_err(msg),
    }
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

fn dict_to_json(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(s) = obj.extract::<String>() {
        return Ok(s);
    }
    py.import("json")?.call_method1("dumps", (obj,))?.extract()
}

/// Uniform grid of n nodes on [0, 1].
#[pyclass(name = "Grid", frozen)]
struct PyGrid {
    inner: ff::Grid,
}

#[pymethods]
impl PyGrid {
    #[new]
    fn new(n: usize) -> PyResult<Self> {
        Ok(Self {
            inner: ff::build_grid(n).map_err(to_py)?,
        })
    }

    #[getter]
    fn n(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.inner.dx()
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes().to_vec()
    }

    /// Trapezoid integral of nodal values.
    fn integrate(&self, values: Vec<f64>) -> PyResult<f64> {
        if values.len() != self.inner.len() {
            return Err(PyValueError::new_err(format!(
                "expected {} values, got {}",
                self.inner.len(),
                values.len()
            )));
        }
        Ok(self.inner.integrate(&values))
    }

    fn __repr__(&self) -> String {
        format!("Grid(n={})", self.inner.len())
    }
}

/// Model kind, rates and potential gamma * V.
#[pyclass(name = "Model", frozen)]
struct PyModel {
    inner: ff::ModelSpec,
}

fn parse_kind(model: &str) -> PyResult<ff::ModelKind> {
    match model {
        "A" | "a" => Ok(ff::ModelKind::A),
        "B" | "b" => Ok(ff::ModelKind::B),
        "C" | "c" => Ok(ff::ModelKind::C),
        other => Err(PyValueError::new_err(format!("unknown model {other:?}, expected A, B or C"))),
    }
}

fn parse_potential(potential: &str, gamma: f64, values: Option<Vec<f64>>) -> PyResult<ff::PotentialSpec> {
    let kind = match (potential, values) {
        ("linear", None) => ff::PotentialKind::Linear,
        ("zero", None) => ff::PotentialKind::Zero,
        ("scaled-linear", None) => ff::PotentialKind::ScaledLinear,
        ("tabulated", Some(v)) => ff::PotentialKind::Tabulated(v),
        ("tabulated", None) => return Err(PyValueError::new_err("tabulated potential needs values")),
        (other, Some(_)) if other != "tabulated" => {
            return Err(PyValueError::new_err("values are only used by the tabulated potential"))
        }
        (other, _) => return Err(PyValueError::new_err(format!("unknown potential {other:?}"))),
    };
    Ok(ff::PotentialSpec { kind, gamma })
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (model, alpha, beta, gamma = 1.0, potential = "linear", values = None))]
    fn new(
        model: &str,
        alpha: f64,
        beta: f64,
        gamma: f64,
        potential: &str,
        values: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let spec = ff::ModelSpec::new(parse_kind(model)?, alpha, beta, parse_potential(potential, gamma, values)?);
        spec.validate().map_err(to_py)?;
        Ok(Self { inner: spec })
    }

    #[getter]
    fn model(&self) -> String {
        self.inner.model.to_string()
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn gamma(&self) -> f64 {
        self.inner.potential.gamma
    }

    /// Nodal values of gamma * V on `grid`.
    fn potential(&self, grid: &PyGrid) -> PyResult<Vec<f64>> {
        Ok(ff::eval_potential(&self.inner.potential, &grid.inner).map_err(to_py)?.nodal)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model({}, alpha={}, beta={}, gamma={})",
            self.inner.model, self.inner.alpha, self.inner.beta, self.inner.potential.gamma
        )
    }
}

#[pyclass(name = "Stationary", frozen)]
struct PyStationary {
    #[pyo3(get)]
    values: Vec<f64>,
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    residual: f64,
    #[pyo3(get)]
    mass: f64,
}

impl From<ff::StationarySolution> for PyStationary {
    fn from(s: ff::StationarySolution) -> Self {
        Self {
            mass: ff::mass(&s.field),
            values: s.field.into_values(),
            method: match s.method {
                ff::StationaryMethod::ClosedForm => "closed-form".into(),
                ff::StationaryMethod::Numeric => "numeric".into(),
            },
            residual: s.residual,
        }
    }
}

/// Stationary density; `method` is "closed-form" or "numeric".
#[pyfunction]
#[pyo3(signature = (model, grid, method = "numeric"))]
fn stationary(model: &PyModel, grid: &PyGrid, method: &str) -> PyResult<PyStationary> {
    let s = match method {
        "closed-form" => ff::stationary_closed(&model.inner, &grid.inner),
        "numeric" => ff::stationary_numeric(&model.inner, &grid.inner),
        other => return Err(PyValueError::new_err(format!("unknown method {other:?}"))),
    };
    Ok(s.map_err(to_py)?.into())
}

#[pyclass(name = "Eigen", frozen)]
struct PyEigen {
    #[pyo3(get)]
    k: f64,
    #[pyo3(get)]
    lam: f64,
    #[pyo3(get)]
    rate: f64,
    #[pyo3(get)]
    equation: String,
    #[pyo3(get)]
    root_residual: f64,
}

impl From<ff::EigenResult> for PyEigen {
    fn from(e: ff::EigenResult) -> Self {
        Self {
            k: e.k,
            lam: e.lambda,
            rate: e.rate,
            equation: match e.equation_tag {
                ff::EquationTag::Friedrichs => "friedrichs".into(),
                ff::EquationTag::Symmetric => "symmetric".into(),
            },
            root_residual: e.root_residual,
        }
    }
}

#[pymethods]
impl PyEigen {
    fn __repr__(&self) -> String {
        format!("Eigen({}, k={:.10}, rate={:.10})", self.equation, self.k, self.rate)
    }
}

/// Smallest positive root of the Robin problem with weights w0, w1.
#[pyfunction]
fn friedrichs_k(w0: f64, w1: f64) -> PyResult<PyEigen> {
    Ok(ff::friedrichs_k(w0, w1).map_err(to_py)?.into())
}

/// Smallest positive root of the symmetric Robin problem with weight beta.
#[pyfunction]
fn symmetric_k(beta: f64) -> PyResult<PyEigen> {
    Ok(ff::symmetric_k(beta).map_err(to_py)?.into())
}

/// Smallest discrete Robin eigenvalue and its eigenvector.
#[pyfunction]
fn discrete_min_rayleigh(grid: &PyGrid, w0: f64, w1: f64) -> PyResult<(f64, Vec<f64>)> {
    let r = ff::discrete_min_rayleigh(&grid.inner, w0, w1).map_err(to_py)?;
    Ok((r.lambda, r.vector))
}

/// The function behind the Csiszár–Kullback constant.
#[pyfunction]
fn phi(x: f64, y: f64) -> PyResult<f64> {
    ff::phi(x, y).map_err(to_py)
}

/// Names accepted by `preset`.
#[pyfunction]
fn preset_names() -> Vec<&'static str> {
    experiments::PRESETS.to_vec()
}

/// Run config of a named preset, as a dict.
#[pyfunction]
#[pyo3(signature = (name, coarse = false))]
fn preset<'py>(py: Python<'py>, name: &str, coarse: bool) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = experiments::preset(name).map_err(to_py)?;
    if coarse {
        cfg = cfg.coarse();
    }
    json_to_py(py, &cfg.to_json())
}

fn parse_config(py: Python<'_>, config: &Bound<'_, PyAny>) -> PyResult<RunConfig> {
    RunConfig::from_json(&dict_to_json(py, config)?).map_err(to_py)
}

/// Runs a config (dict or JSON string) in memory and returns its summary.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(py, config)?;
    let sim = py.detach(|| experiments::simulate(&cfg)).map_err(to_py)?;
    let text = serde_json::to_string(&sim.summary).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let out = json_to_py(py, &text)?;
    let extra = PyDict::new(py);
    extra.set_item("t", sim.trajectory.observations.t.clone())?;
    extra.set_item("entropy", sim.trajectory.observations.entropy.clone())?;
    extra.set_item("mass", sim.trajectory.observations.mass.clone())?;
    extra.set_item("final", sim.trajectory.final_field.values().to_vec())?;
    out.set_item("series", extra)?;
    Ok(out)
}

/// Runs a config and writes its artifacts. Returns (summary, written paths).
#[pyfunction]
#[pyo3(signature = (config, out = None))]
fn run<'py>(
    py: Python<'py>,
    config: &Bound<'py, PyAny>,
    out: Option<PathBuf>,
) -> PyResult<(Bound<'py, PyAny>, Vec<PathBuf>)> {
    let mut cfg = parse_config(py, config)?;
    if let Some(out) = out {
        cfg.outputs = out;
    }
    let outcome = py.detach(|| experiments::run(&cfg)).map_err(to_py)?;
    let text =
        serde_json::to_string(outcome.summary()).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((json_to_py(py, &text)?, outcome.files))
}

#[pymodule(name = "fokker_flux")]
fn fokker_flux_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyStationary>()?;
    m.add_class::<PyEigen>()?;
    m.add_function(wrap_pyfunction!(stationary, m)?)?;
    m.add_function(wrap_pyfunction!(friedrichs_k, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_k, m)?)?;
    m.add_function(wrap_pyfunction!(discrete_min_rayleigh, m)?)?;
    m.add_function(wrap_pyfunction!(phi, m)?)?;
    m.add_function(wrap_pyfunction!(preset_names, m)?)?;
    m.add_function(wrap_pyfunction!(preset, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
