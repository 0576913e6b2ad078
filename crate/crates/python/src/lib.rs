use std::collections::BTreeMap;
use std::path::PathBuf;

use ld::elo;
use ld::io::{self, Format};
use ld::perturb::{self, MorphOp, MorphSpec, NoiseKind, NoiseSpec};
use ld::{stats, Label, MetricName};
use pyo3::create_exception;
use pyo3::exceptions::{PyKeyError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(labeldist, InapplicableError, PyValueError);

fn to_py(err: ld::Error) -> PyErr {
    match err {
        ld::Error::Io(e) => PyOSError::new_err(e.to_string()),
        ld::Error::Inapplicable { .. } | ld::Error::NotBinary(_) => {
            InapplicableError::new_err(err.to_string())
        }
        ld::Error::UnknownId(_) => PyKeyError::new_err(err.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// A 2-D grid of integer labels.
#[pyclass(name = "LabeledArray", module = "labeldist", frozen, eq, skip_from_py_object)]
#[derive(Clone, PartialEq)]
struct PyLabeledArray {
    inner: ld::LabeledArray,
}

impl From<ld::LabeledArray> for PyLabeledArray {
    fn from(inner: ld::LabeledArray) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyLabeledArray {
    /// Builds an array from a list of equally long rows.
    #[new]
    fn new(rows: Vec<Vec<Label>>) -> PyResult<Self> {
        Ok(ld::LabeledArray::from_rows(&rows).map_err(to_py)?.into())
    }

    #[staticmethod]
    fn from_flat(rows: usize, cols: usize, labels: Vec<Label>) -> PyResult<Self> {
        Ok(ld::LabeledArray::new(rows, cols, labels).map_err(to_py)?.into())
    }

    #[staticmethod]
    fn filled(rows: usize, cols: usize, label: Label) -> PyResult<Self> {
        Ok(ld::LabeledArray::filled(rows, cols, label).map_err(to_py)?.into())
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.shape()
    }

    fn labels(&self) -> Vec<Label> {
        self.inner.labels().to_vec()
    }

    fn tolist(&self) -> Vec<Vec<Label>> {
        self.inner.to_rows()
    }

    fn distinct_labels(&self) -> Vec<Label> {
        self.inner.distinct_labels().into_iter().collect()
    }

    fn __getitem__(&self, index: (usize, usize)) -> PyResult<Label> {
        self.inner
            .get(index.0, index.1)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err("index out of range"))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        let (r, c) = self.inner.shape();
        format!(
            "LabeledArray({r}x{c}, {} labels)",
            self.inner.distinct_labels().len()
        )
    }
}

fn metric_value(g: &PyLabeledArray, i: &PyLabeledArray, name: MetricName) -> PyResult<f64> {
    let ev = ld::Evaluation::new(&g.inner, &i.inner).map_err(to_py)?;
    Ok(ev.metric(name).map_err(to_py)?.value)
}

#[pyfunction]
fn nhd(g: &PyLabeledArray, i: &PyLabeledArray) -> PyResult<f64> {
    metric_value(g, i, MetricName::Nhd)
}

#[pyfunction]
fn bsm(g: &PyLabeledArray, i: &PyLabeledArray) -> PyResult<f64> {
    metric_value(g, i, MetricName::Bsm)
}

#[pyfunction]
fn rm(g: &PyLabeledArray, i: &PyLabeledArray) -> PyResult<f64> {
    metric_value(g, i, MetricName::Rm)
}

#[pyfunction]
fn lad(g: &PyLabeledArray, i: &PyLabeledArray) -> PyResult<f64> {
    metric_value(g, i, MetricName::Lad)
}

/// Returns 1.5 when the mapping is degenerate; see `compare_all` for the flag.
#[pyfunction]
fn madlad(g: &PyLabeledArray, i: &PyLabeledArray) -> PyResult<f64> {
    metric_value(g, i, MetricName::Madlad)
}

/// All metrics at once. `bsm` is None when either input has more than two labels.
#[pyfunction]
fn compare_all<'py>(
    py: Python<'py>,
    g: &PyLabeledArray,
    i: &PyLabeledArray,
) -> PyResult<Bound<'py, PyDict>> {
    let c = ld::compare_all(&g.inner, &i.inner).map_err(to_py)?;
    let out = PyDict::new(py);
    for name in MetricName::ALL {
        out.set_item(name.as_str(), c.value(name))?;
    }
    out.set_item("degenerate", c.degenerate)?;
    out.set_item("mismatched_pixels", c.mismatched_pixels)?;
    out.set_item("u", c.u)?;
    out.set_item("v", c.v)?;
    Ok(out)
}

#[pyfunction]
fn region_mapping<'py>(
    py: Python<'py>,
    g: &PyLabeledArray,
    i: &PyLabeledArray,
) -> PyResult<Bound<'py, PyDict>> {
    let m = ld::region_mapping(&g.inner, &i.inner).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("assignment", m.assignment)?;
    out.set_item("mismatched_pixels", m.mismatched_pixels)?;
    out.set_item("degenerate", m.degenerate)?;
    Ok(out)
}

/// `kind` is "salt", "pepper" or "salt_and_pepper".
#[pyfunction]
#[pyo3(signature = (arr, kind, level, seed = 0))]
fn noise(arr: &PyLabeledArray, kind: &str, level: f64, seed: u64) -> PyResult<PyLabeledArray> {
    let kind = match kind.replace('-', "_").as_str() {
        "salt" => NoiseKind::Salt,
        "pepper" => NoiseKind::Pepper,
        "salt_and_pepper" => NoiseKind::SaltAndPepper,
        other => return Err(PyValueError::new_err(format!("unknown noise kind `{other}`"))),
    };
    let spec = NoiseSpec::new(kind, level, seed);
    Ok(perturb::apply_noise(&arr.inner, &spec).map_err(to_py)?.into())
}

/// `op` is "erode", "dilate", "open" or "close" with an odd square footprint.
#[pyfunction]
#[pyo3(signature = (arr, op, footprint, foreground = 0, background = 1))]
fn morph(
    arr: &PyLabeledArray,
    op: &str,
    footprint: usize,
    foreground: Label,
    background: Label,
) -> PyResult<PyLabeledArray> {
    let op = match op {
        "erode" => MorphOp::Erode,
        "dilate" => MorphOp::Dilate,
        "open" => MorphOp::Open,
        "close" => MorphOp::Close,
        other => return Err(PyValueError::new_err(format!("unknown operation `{other}`"))),
    };
    let spec = MorphSpec::new(op, footprint).with_labels(foreground, background);
    Ok(perturb::morph(&arr.inner, &spec).map_err(to_py)?.into())
}

#[pyfunction]
fn load_array(path: PathBuf) -> PyResult<PyLabeledArray> {
    Ok(io::load_array_auto(&path).map_err(to_py)?.into())
}

/// Format follows the extension: `.pgm` (8-bit, or `pgm16=True`) or `.csv`.
#[pyfunction]
#[pyo3(signature = (arr, path, pgm16 = false))]
fn save_array(arr: &PyLabeledArray, path: PathBuf, pgm16: bool) -> PyResult<()> {
    let format = match (Format::from_path(&path), pgm16) {
        (Some(Format::Pgm), true) => Format::Pgm16,
        (Some(f), _) => f,
        (None, _) => Format::Csv,
    };
    io::save_array(&arr.inner, &path, format).map_err(to_py)
}

#[pyfunction]
fn expected_score(ra: f64, rb: f64) -> f64 {
    elo::expected_score(ra, rb)
}

#[pyclass(name = "EloRatings", module = "labeldist")]
struct PyEloRatings {
    inner: elo::EloRatings,
}

#[pymethods]
impl PyEloRatings {
    #[new]
    #[pyo3(signature = (ids, k_factor = elo::DEFAULT_K, initial = 0.0))]
    fn new(ids: Vec<String>, k_factor: f64, initial: f64) -> Self {
        Self {
            inner: elo::EloRatings::with_params(ids, k_factor, initial),
        }
    }

    fn apply_result(&mut self, winner: &str, loser: &str) -> PyResult<()> {
        self.inner.apply_result(winner, loser).map_err(to_py)
    }

    fn rating(&self, id: &str) -> PyResult<f64> {
        self.inner
            .rating(id)
            .ok_or_else(|| PyKeyError::new_err(id.to_string()))
    }

    #[getter]
    fn ratings(&self) -> BTreeMap<String, f64> {
        self.inner.ratings.clone()
    }

    /// Ids from best to worst.
    fn ranking(&self) -> Vec<String> {
        self.inner.ranking()
    }

    fn total(&self) -> f64 {
        self.inner.total()
    }
}

/// Least-squares line with the two-sided slope p-value.
#[pyfunction]
fn ols_fit<'py>(py: Python<'py>, x: Vec<f64>, y: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let r = stats::ols_fit(&x, &y).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("slope", r.slope)?;
    out.set_item("intercept", r.intercept)?;
    out.set_item("r2", r.r_squared)?;
    out.set_item("p", r.p_value)?;
    out.set_item("n", r.n)?;
    Ok(out)
}

#[pyfunction]
fn t_tail(t: f64, df: u32) -> PyResult<f64> {
    stats::t_tail(t, df).map_err(to_py)
}

#[pymodule]
fn labeldist(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLabeledArray>()?;
    m.add_class::<PyEloRatings>()?;
    m.add("InapplicableError", m.py().get_type::<InapplicableError>())?;
    m.add("DEGENERATE_SENTINEL", ld::DEGENERATE_SENTINEL)?;
    m.add_function(wrap_pyfunction!(nhd, m)?)?;
    m.add_function(wrap_pyfunction!(bsm, m)?)?;
    m.add_function(wrap_pyfunction!(rm, m)?)?;
    m.add_function(wrap_pyfunction!(lad, m)?)?;
    m.add_function(wrap_pyfunction!(madlad, m)?)?;
    m.add_function(wrap_pyfunction!(compare_all, m)?)?;
    m.add_function(wrap_pyfunction!(region_mapping, m)?)?;
    m.add_function(wrap_pyfunction!(noise, m)?)?;
    m.add_function(wrap_pyfunction!(morph, m)?)?;
    m.add_function(wrap_pyfunction!(load_array, m)?)?;
    m.add_function(wrap_pyfunction!(save_array, m)?)?;
    m.add_function(wrap_pyfunction!(expected_score, m)?)?;
    m.add_function(wrap_pyfunction!(ols_fit, m)?)?;
    m.add_function(wrap_pyfunction!(t_tail, m)?)?;
    Ok(())
}
