//! Python bindings for the constrained MARS regression library.
//!
//! Exposes the fitting pipeline, lattice operations, and cross-validation
//! with plain lists in and out, so the module works without a numpy
//! dependency. Rows are `list[list[float]]`, vectors are `list[float]`.

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py_err(e: lmars::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map(|r| r.len()).unwrap_or(0);
    if d == 0 {
        return Err(PyValueError::new_err("need at least one row and one column"));
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have inconsistent lengths"));
    }
    Ok(Array2::from_shape_vec((n, d), rows.concat())
        .expect("shape checked above"))
}

/// A fitted model: intercept plus hinge-product terms.
#[pyclass(name = "MarsModel", module = "lmars_py", skip_from_py_object)]
#[derive(Clone)]
struct PyMarsModel {
    inner: lmars::MarsModel,
}

#[pymethods]
impl PyMarsModel {
    /// Evaluate the model at each row of `x`.
    fn predict(&self, x: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = matrix_from_rows(x)?;
        let pred = lmars::predict(&self.inner, x.view()).map_err(to_py_err)?;
        Ok(pred.to_vec())
    }

    /// Sum of absolute coefficients of terms with at least one nonzero knot.
    fn vmars(&self) -> f64 {
        self.inner.vmars_finite()
    }

    #[getter]
    fn intercept(&self) -> f64 {
        self.inner.intercept
    }

    #[getter]
    fn dims(&self) -> usize {
        self.inner.d
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.fit_meta.as_ref().map(|m| m.converged).unwrap_or(true)
    }

    /// Terms as `(alpha, knots, coef)` tuples.
    fn terms(&self) -> Vec<(Vec<u8>, Vec<f64>, f64)> {
        self.inner
            .terms
            .iter()
            .map(|t| (t.alpha.clone(), t.knots.clone(), t.coef))
            .collect()
    }

    /// Serialize to the model JSON format.
    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json_string().map_err(to_py_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyMarsModel { inner: lmars::MarsModel::from_json_str(text).map_err(to_py_err)? })
    }

    /// Rewrite a scaled-domain model in its original coordinates.
    fn to_original_domain(&self) -> PyResult<Self> {
        Ok(PyMarsModel { inner: lmars::to_original_domain(&self.inner).map_err(to_py_err)? })
    }

    fn __repr__(&self) -> String {
        format!(
            "MarsModel(d={}, terms={}, intercept={:.6})",
            self.inner.d,
            self.inner.terms.len(),
            self.inner.intercept
        )
    }
}

/// Fit the budget-constrained model on points `x` with responses `y`.
#[pyfunction]
#[pyo3(signature = (x, y, v, s=None, scale_inputs=false, tol=1e-8, max_iter=100_000))]
fn fit(
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    v: f64,
    s: Option<usize>,
    scale_inputs: bool,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyMarsModel> {
    let x = matrix_from_rows(x)?;
    let y = Array1::from_vec(y);
    let mut config = lmars::FitConfig::new(v)
        .with_scaling(scale_inputs)
        .with_tol(tol)
        .with_max_iter(max_iter);
    if let Some(s) = s {
        config = config.with_s(s);
    }
    Ok(PyMarsModel { inner: lmars::fit(x.view(), y.view(), &config).map_err(to_py_err)? })
}

/// Fit on an equally spaced lattice. `values` is the row-major tensor with
/// dimension 1 slowest; returns `(theta_hat, model)`.
#[pyfunction]
#[pyo3(signature = (values, sizes, v, s=None))]
fn fit_lattice(
    values: Vec<f64>,
    sizes: Vec<usize>,
    v: f64,
    s: Option<usize>,
) -> PyResult<(Vec<f64>, PyMarsModel)> {
    let shape = lmars::LatticeShape::new(sizes).map_err(to_py_err)?;
    let s = s.unwrap_or(shape.dims());
    let field = lmars::LatticeField::new(shape, values).map_err(to_py_err)?;
    let fit = lmars::fit_lattice(&field, v, s).map_err(to_py_err)?;
    Ok((
        fit.theta_hat.values().to_vec(),
        PyMarsModel { inner: fit.model },
    ))
}

/// Discrete variation of a row-major lattice tensor.
#[pyfunction]
fn v2(values: Vec<f64>, sizes: Vec<usize>) -> PyResult<f64> {
    let shape = lmars::LatticeShape::new(sizes).map_err(to_py_err)?;
    let field = lmars::LatticeField::new(shape, values).map_err(to_py_err)?;
    lmars::v2(&field).map_err(to_py_err)
}

/// k-fold cross-validation over a budget grid. Returns a dict with keys
/// `grid`, `mean_mse`, `se_mse`, `best_v`.
#[pyfunction]
#[pyo3(signature = (x, y, folds=10, grid=None, seed=0, s=None, scale_inputs=false))]
#[allow(clippy::too_many_arguments)]
fn cross_validate<'py>(
    py: Python<'py>,
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    folds: usize,
    grid: Option<Vec<f64>>,
    seed: u64,
    s: Option<usize>,
    scale_inputs: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let x = matrix_from_rows(x)?;
    let y = Array1::from_vec(y);
    let config = lmars::CvConfig {
        folds,
        grid,
        seed,
        s,
        scale_inputs,
        ..lmars::CvConfig::default()
    };
    let result = lmars::cross_validate(x.view(), y.view(), &config).map_err(to_py_err)?;
    let out = PyDict::new(py);
    out.set_item("grid", result.grid)?;
    out.set_item("mean_mse", result.mean_mse)?;
    out.set_item("se_mse", result.se_mse)?;
    out.set_item("best_v", result.best_v)?;
    Ok(out)
}

/// Variation of a Python-callable function on `[0,1]^d` by quadrature and
/// finite differences.
#[pyfunction]
#[pyo3(signature = (f, dims, grid_points=64, fd_step=1e-3))]
fn vmars_smooth(f: Py<PyAny>, dims: usize, grid_points: usize, fd_step: f64) -> PyResult<f64> {
    let callable = std::sync::Arc::new(f);
    let cb = callable.clone();
    let smooth = lmars::SmoothFunction::new(dims, move |x: &[f64]| {
        Python::attach(|py| {
            cb.call1(py, (x.to_vec(),))
                .and_then(|v| v.extract::<f64>(py))
                .unwrap_or(f64::NAN)
        })
    });
    lmars::vmars_smooth(&smooth, grid_points, fd_step).map_err(to_py_err)
}

#[pymodule]
fn lmars_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMarsModel>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(fit_lattice, m)?)?;
    m.add_function(wrap_pyfunction!(v2, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(vmars_smooth, m)?)?;
    Ok(())
}
