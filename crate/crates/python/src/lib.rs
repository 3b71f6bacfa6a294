//! Python bindings: datasets, covariate laws, working regressions, the three
//! bound constructions and the simulation driver.

use floodgate::cosufficient::{cosufficient_lcb, CosufficientConfig};
use floodgate::covariate::CovariateModel;
use floodgate::macm::{macm_lcb, MacmConfig};
use floodgate::mmse::{floodgate_lcb, floodgate_lcb_scale_free, FloodgateConfig};
use floodgate::regression::{CvConfig, Fitter, RegressionKind, WorkingRegression};
use floodgate::sim::{run_experiment, ExperimentSpec};
use floodgate::{ConfidenceLevel, FloodgateError, LcbReport};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: FloodgateError) -> PyErr {
    match e {
        FloodgateError::Io(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

#[pyclass(name = "Dataset", frozen)]
struct PyDataset(floodgate::Dataset);

#[pymethods]
impl PyDataset {
    /// `x` and `z` are lists of rows.
    #[new]
    fn new(y: Vec<f64>, x: Vec<Vec<f64>>, z: Vec<Vec<f64>>) -> PyResult<Self> {
        let x = floodgate::RowMatrix::from_rows(&x).map_err(err)?;
        let z = floodgate::RowMatrix::from_rows(&z).map_err(err)?;
        Ok(PyDataset(floodgate::Dataset::new(y, x, z).map_err(err)?))
    }

    #[staticmethod]
    fn from_csv(path: std::path::PathBuf) -> PyResult<Self> {
        Ok(PyDataset(
            floodgate::Dataset::from_csv_path(&path).map_err(err)?,
        ))
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn dx(&self) -> usize {
        self.0.dx()
    }

    #[getter]
    fn dz(&self) -> usize {
        self.0.dz()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.0.y().to_vec()
    }
}

#[pyclass(name = "CovariateModel", frozen)]
struct PyCovariateModel(CovariateModel);

#[pymethods]
impl PyCovariateModel {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        serde_json::from_str(text)
            .map(PyCovariateModel)
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.0).expect("model serializes")
    }

    #[getter]
    fn dim(&self) -> usize {
        self.0.dim()
    }

    /// Draw `(x, z)` rows from the joint law.
    fn sample(&self, n: usize, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let (x, z) = self.0.sample_joint(n, seed).map_err(err)?;
        let rows = |m: &floodgate::RowMatrix| (0..m.nrows()).map(|i| m.row(i).to_vec()).collect();
        Ok((rows(&x), rows(&z)))
    }
}

#[pyclass(name = "WorkingRegression", frozen)]
struct PyWorkingRegression(WorkingRegression);

#[pymethods]
impl PyWorkingRegression {
    #[staticmethod]
    fn linear(intercept: f64, x_coef: Vec<f64>, z_coef: Vec<f64>) -> Self {
        PyWorkingRegression(WorkingRegression::linear(
            RegressionKind::Custom,
            intercept,
            x_coef,
            z_coef,
        ))
    }

    /// Fit with one of `ols`, `ridge`, `lasso`, `logit_l1`, `logit_l2`.
    #[staticmethod]
    #[pyo3(signature = (data, fitter, cv_folds = 10, seed = 0))]
    fn fit(data: &PyDataset, fitter: &str, cv_folds: usize, seed: u64) -> PyResult<Self> {
        let f = Fitter::parse(fitter)
            .ok_or_else(|| PyValueError::new_err(format!("unknown fitter `{fitter}`")))?;
        let cv = CvConfig {
            folds: cv_folds,
            ..CvConfig::default()
        };
        Ok(PyWorkingRegression(f.fit(&data.0, &cv, seed).map_err(err)?))
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        WorkingRegression::from_json(text)
            .map(PyWorkingRegression)
            .map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    fn __call__(&self, x: Vec<f64>, z: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.0.dx() || z.len() != self.0.dz() {
            return Err(PyValueError::new_err(format!(
                "expected {} x and {} z values",
                self.0.dx(),
                self.0.dz()
            )));
        }
        Ok(self.0.eval(&x, &z))
    }
}

#[pyclass(name = "LcbReport", frozen, get_all)]
struct PyLcbReport {
    lcb: f64,
    point: f64,
    se: f64,
    n_eff: usize,
    estimand: &'static str,
    degenerate: bool,
}

#[pymethods]
impl PyLcbReport {
    fn __repr__(&self) -> String {
        format!(
            "LcbReport(estimand={}, lcb={}, point={}, se={}, n_eff={}, degenerate={})",
            self.estimand,
            self.lcb,
            self.point,
            self.se,
            self.n_eff,
            if self.degenerate { "True" } else { "False" }
        )
    }
}

impl From<LcbReport> for PyLcbReport {
    fn from(r: LcbReport) -> Self {
        PyLcbReport {
            lcb: r.lcb,
            point: r.point,
            se: r.se,
            n_eff: r.n_eff,
            estimand: r.estimand.as_str(),
            degenerate: r.degenerate,
        }
    }
}

fn level(alpha: f64) -> PyResult<ConfidenceLevel> {
    ConfidenceLevel::new(alpha).map_err(err)
}

/// Bound on the mMSE gap. `k = 0` uses closed-form conditional moments.
#[pyfunction]
#[pyo3(signature = (data, mu, model, alpha = 0.05, k = 0, center_y = true, scale_free = false, seed = 0))]
fn mmse_lcb(
    py: Python<'_>,
    data: &PyDataset,
    mu: &PyWorkingRegression,
    model: &PyCovariateModel,
    alpha: f64,
    k: usize,
    center_y: bool,
    scale_free: bool,
    seed: u64,
) -> PyResult<PyLcbReport> {
    let cfg = FloodgateConfig {
        alpha: level(alpha)?,
        big_k: k,
        center_y,
        seed,
    };
    let run = || {
        if scale_free {
            floodgate_lcb_scale_free(&data.0, &mu.0, &model.0, &cfg)
        } else {
            floodgate_lcb(&data.0, &mu.0, &model.0, &cfg)
        }
    };
    py.detach(run).map(Into::into).map_err(err)
}

/// Bound on the MACM gap for `Y` in {-1, +1}.
#[pyfunction(name = "macm_lcb")]
#[pyo3(signature = (data, mu, model, alpha = 0.05, m = None, k = 100, exact = false, seed = 0))]
fn py_macm_lcb(
    py: Python<'_>,
    data: &PyDataset,
    mu: &PyWorkingRegression,
    model: &PyCovariateModel,
    alpha: f64,
    m: Option<usize>,
    k: usize,
    exact: bool,
    seed: u64,
) -> PyResult<PyLcbReport> {
    let cfg = MacmConfig {
        alpha: level(alpha)?,
        m_copies: m,
        k_copies: k,
        exact_moments: exact,
        seed,
    };
    py.detach(|| macm_lcb(&data.0, &mu.0, &model.0, &cfg))
        .map(Into::into)
        .map_err(err)
}

/// Batch-conditional bound; `mc_k = 0` uses closed-form moments.
#[pyfunction(name = "cosufficient_lcb")]
#[pyo3(signature = (data, mu, model, alpha = 0.05, n2 = 100, mc_k = 0, seed = 0))]
fn py_cosufficient_lcb(
    py: Python<'_>,
    data: &PyDataset,
    mu: &PyWorkingRegression,
    model: &PyCovariateModel,
    alpha: f64,
    n2: usize,
    mc_k: usize,
    seed: u64,
) -> PyResult<PyLcbReport> {
    let cfg = CosufficientConfig {
        alpha: level(alpha)?,
        n2,
        mc_k,
        seed,
    };
    py.detach(|| cosufficient_lcb(&data.0, &mu.0, &model.0, &cfg))
        .map(Into::into)
        .map_err(err)
}

/// Run a simulation spec given as JSON. Returns the summary rows as dicts
/// plus the detail and summary CSV text.
#[pyfunction(name = "run_experiment")]
fn py_run_experiment<'py>(py: Python<'py>, spec_json: &str) -> PyResult<Bound<'py, PyDict>> {
    let spec = ExperimentSpec::from_json(spec_json).map_err(err)?;
    let res = py.detach(|| run_experiment(&spec)).map_err(err)?;
    let (mut detail, mut summary) = (Vec::new(), Vec::new());
    res.write_detail_csv(&mut detail).map_err(err)?;
    res.write_summary_csv(&mut summary).map_err(err)?;
    let out = PyDict::new(py);
    let rows = res
        .summary
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("label", &r.label)?;
            d.set_item("count", r.count)?;
            d.set_item("oracle", r.oracle)?;
            d.set_item("coverage", r.coverage)?;
            d.set_item("coverage_se", r.coverage_se)?;
            d.set_item("mean_half_width", r.mean_half_width)?;
            d.set_item("mean_lcb", r.mean_lcb)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    out.set_item("summary", rows)?;
    out.set_item("explained_variance", res.explained_variance)?;
    out.set_item(
        "detail_csv",
        String::from_utf8(detail).expect("csv is utf-8"),
    )?;
    out.set_item(
        "summary_csv",
        String::from_utf8(summary).expect("csv is utf-8"),
    )?;
    Ok(out)
}

#[pymodule]
fn floodgate_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyCovariateModel>()?;
    m.add_class::<PyWorkingRegression>()?;
    m.add_class::<PyLcbReport>()?;
    m.add_function(wrap_pyfunction!(mmse_lcb, m)?)?;
    m.add_function(wrap_pyfunction!(py_macm_lcb, m)?)?;
    m.add_function(wrap_pyfunction!(py_cosufficient_lcb, m)?)?;
    m.add_function(wrap_pyfunction!(py_run_experiment, m)?)?;
    Ok(())
}
