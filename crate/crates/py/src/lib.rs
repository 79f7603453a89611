//! Python bindings for the core crate.

// pyo3 0.22 macros expand `PyResult` returns through a no-op `Into`.
#![allow(clippy::useless_conversion)]

use loopvir::algebra::{self, AlgebraElement, DualPoint};
use loopvir::report::{self, HierarchyConfig, VerifyConfig};
use loopvir::solver::{self, SimConfig};
use loopvir::{Error, Grid, SpectralField};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::InvalidConfig(_) | Error::InvalidGrid { .. } | Error::GridMismatch { .. } | Error::Parse { .. } => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn square(n: usize) -> PyResult<Grid> {
    Grid::square(n).map_err(py_err)
}

/// Real field on the periodic square, stored as Fourier coefficients.
#[pyclass(name = "SpectralField", module = "loopvir")]
#[derive(Clone)]
struct PyField(SpectralField);

#[pymethods]
impl PyField {
    /// Builds a field from `nx * ny` samples in row-major `[iy][ix]` order.
    #[new]
    fn new(nx: usize, ny: usize, values: Vec<f64>) -> PyResult<Self> {
        let grid = Grid::new(nx, ny).map_err(py_err)?;
        SpectralField::from_grid(grid, &values).map(Self).map_err(py_err)
    }

    /// Seeded random field with modes `|kx|, |ky| ≤ band`, scaled to unit amplitude.
    #[staticmethod]
    #[pyo3(signature = (n, seed, band, amplitude = 1.0))]
    fn random(n: usize, seed: u64, band: i64, amplitude: f64) -> PyResult<Self> {
        Ok(Self(SpectralField::random(square(n)?, seed, band, amplitude)))
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        let g = self.0.grid();
        (g.nx, g.ny)
    }

    fn to_grid(&self) -> Vec<f64> {
        self.0.to_grid()
    }

    fn coeff(&self, kx: i64, ky: i64) -> (f64, f64) {
        let c = self.0.coeff(kx, ky);
        (c.re, c.im)
    }

    fn integral(&self) -> f64 {
        self.0.integral()
    }

    fn l2_norm(&self) -> f64 {
        self.0.l2_norm()
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    fn inner(&self, other: &Self) -> PyResult<f64> {
        self.0.inner(&other.0).map_err(py_err)
    }

    fn dx(&self) -> Self {
        Self(self.0.dx())
    }

    fn dy(&self) -> Self {
        Self(self.0.dy())
    }

    fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    fn multiply(&self, other: &Self) -> PyResult<Self> {
        self.0.multiply(&other.0).map(Self).map_err(py_err)
    }

    fn max_difference(&self, other: &Self) -> PyResult<f64> {
        self.0.max_difference(&other.0).map_err(py_err)
    }

    fn __add__(&self, other: &Self) -> PyResult<Self> {
        self.0.grid().check(&other.0.grid()).map_err(py_err)?;
        let mut out = self.0.clone();
        out += &other.0;
        Ok(Self(out))
    }

    fn __sub__(&self, other: &Self) -> PyResult<Self> {
        self.0.grid().check(&other.0.grid()).map_err(py_err)?;
        let mut out = self.0.clone();
        out -= &other.0;
        Ok(Self(out))
    }

    fn __mul__(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    fn __rmul__(&self, s: f64) -> Self {
        Self(self.0.scale(s))
    }

    fn __neg__(&self) -> Self {
        Self(-&self.0)
    }

    fn __repr__(&self) -> String {
        let (nx, ny) = self.shape();
        format!("SpectralField({nx}x{ny}, l2_norm={:.6e})", self.0.l2_norm())
    }
}

/// Element `(f, a, α1, α2)` of the centrally extended loop algebra.
#[pyclass(name = "AlgebraElement", module = "loopvir")]
#[derive(Clone)]
struct PyElement(AlgebraElement);

#[pymethods]
impl PyElement {
    #[new]
    #[pyo3(signature = (f, a, alpha1 = 0.0, alpha2 = 0.0))]
    fn new(f: &PyField, a: &PyField, alpha1: f64, alpha2: f64) -> PyResult<Self> {
        AlgebraElement::new(f.0.clone(), a.0.clone(), alpha1, alpha2).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed, band, stream = 0))]
    fn random(n: usize, seed: u64, band: i64, stream: u64) -> PyResult<Self> {
        Ok(Self(AlgebraElement::random(square(n)?, seed, stream, band)))
    }

    #[getter]
    fn f(&self) -> PyField {
        PyField(self.0.f.clone())
    }

    #[getter]
    fn a(&self) -> PyField {
        PyField(self.0.a.clone())
    }

    #[getter]
    fn alpha1(&self) -> f64 {
        self.0.alpha1
    }

    #[getter]
    fn alpha2(&self) -> f64 {
        self.0.alpha2
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn __repr__(&self) -> String {
        format!("AlgebraElement(alpha1={}, alpha2={}, norm={:.6e})", self.0.alpha1, self.0.alpha2, self.0.norm())
    }
}

/// Point `(g, b, c1, c2)` of the dual space.
#[pyclass(name = "DualPoint", module = "loopvir")]
#[derive(Clone)]
struct PyDual(DualPoint);

#[pymethods]
impl PyDual {
    #[new]
    #[pyo3(signature = (g, b, c1 = 0.0, c2 = 0.0))]
    fn new(g: &PyField, b: &PyField, c1: f64, c2: f64) -> PyResult<Self> {
        DualPoint::new(g.0.clone(), b.0.clone(), c1, c2).map(Self).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (n, seed, band, stream = 0))]
    fn random(n: usize, seed: u64, band: i64, stream: u64) -> PyResult<Self> {
        Ok(Self(DualPoint::random(square(n)?, seed, stream, band)))
    }

    #[getter]
    fn g(&self) -> PyField {
        PyField(self.0.g.clone())
    }

    #[getter]
    fn b(&self) -> PyField {
        PyField(self.0.b.clone())
    }

    #[getter]
    fn c1(&self) -> f64 {
        self.0.c1
    }

    #[getter]
    fn c2(&self) -> f64 {
        self.0.c2
    }

    fn norm(&self) -> f64 {
        self.0.norm()
    }

    fn __repr__(&self) -> String {
        format!("DualPoint(c1={}, c2={}, norm={:.6e})", self.0.c1, self.0.c2, self.0.norm())
    }
}

#[pyfunction]
fn bracket(x: &PyElement, y: &PyElement) -> PyResult<PyElement> {
    algebra::bracket(&x.0, &y.0).map(PyElement).map_err(py_err)
}

#[pyfunction]
fn pair(x: &PyElement, m: &PyDual) -> PyResult<f64> {
    algebra::pair(&x.0, &m.0).map_err(py_err)
}

#[pyfunction]
fn coad(x: &PyElement, m: &PyDual) -> PyResult<PyDual> {
    algebra::coad(&x.0, &m.0).map(PyDual).map_err(py_err)
}

#[pyfunction]
fn jacobi_defect(x: &PyElement, y: &PyElement, z: &PyElement) -> PyResult<f64> {
    algebra::jacobi_defect(&x.0, &y.0, &z.0).map_err(py_err)
}

/// Runs the verification checks. `config` is a JSON object with the same
/// keys as the CLI config file; returns the records as a JSON array.
#[pyfunction]
#[pyo3(signature = (config = None, only = None))]
fn verify(config: Option<&str>, only: Option<Vec<String>>) -> PyResult<String> {
    let config: VerifyConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => VerifyConfig::default(),
    };
    let records = report::run_checks(&config, &only.unwrap_or_default()).map_err(py_err)?;
    serde_json::to_string(&records).map_err(json_err)
}

/// Hierarchy table as CSV text.
#[pyfunction]
#[pyo3(signature = (config = None))]
fn hierarchy(config: Option<&str>) -> PyResult<String> {
    let config: HierarchyConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => HierarchyConfig::default(),
    };
    let rows = report::hierarchy_rows(&config).map_err(py_err)?;
    Ok(report::hierarchy_csv(&rows))
}

/// Integrates a system described by a JSON simulation config. Returns the
/// conservation log as JSON together with the final fields.
#[pyfunction]
fn simulate(py: Python<'_>, config: &str) -> PyResult<(String, f64, Vec<PyField>)> {
    let config: SimConfig = serde_json::from_str(config).map_err(json_err)?;
    let out = py.allow_threads(|| solver::run(&config)).map_err(py_err)?;
    let log = serde_json::to_string(&out.log.rows).map_err(json_err)?;
    Ok((log, out.state.t, out.state.fields.into_iter().map(PyField).collect()))
}

#[pymodule]
#[pyo3(name = "loopvir")]
fn loopvir_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyField>()?;
    m.add_class::<PyElement>()?;
    m.add_class::<PyDual>()?;
    m.add_function(wrap_pyfunction!(bracket, m)?)?;
    m.add_function(wrap_pyfunction!(pair, m)?)?;
    m.add_function(wrap_pyfunction!(coad, m)?)?;
    m.add_function(wrap_pyfunction!(jacobi_defect, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchy, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    Ok(())
}
