//! Python bindings: panels, simulation, estimation, gaps, bands, responses and filters.

use std::path::PathBuf;

use nalgebra::DMatrix;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use potgap::analysis::{self, conditional_forecast, GirfResult};
use potgap::dataset::{self, SeriesMeta};
use potgap::filters::{apply_filter, FilterMethod, FilterParams};
use potgap::inference::{bootstrap_bands, BootstrapOptions};
use potgap::pipeline::{estimate_all, FitBundle, RunConfig};
use potgap::simulate::{simulate_dfm, DgpSpec};
use potgap::trend::{decompose_series, output_gap, potential_output, DecompMode};
use potgap::GapError;

fn err(e: GapError) -> PyErr {
    if e.is_numerical() {
        PyArithmeticError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|t| m.row(t).iter().copied().collect()).collect()
}

/// Quarterly panel in standardized units with its metadata.
#[pyclass(module = "potgap_py", skip_from_py_object)]
#[derive(Clone)]
pub struct Panel {
    panel: dataset::Panel,
    meta: Vec<SeriesMeta>,
}

#[pymethods]
impl Panel {
    #[getter]
    fn dates(&self) -> Vec<String> {
        self.panel.dates.iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn tickers(&self) -> Vec<String> {
        self.panel.tickers.clone()
    }

    /// Rows are quarters; missing cells are NaN.
    #[getter]
    fn values(&self) -> Vec<Vec<f64>> {
        rows(&self.panel.values)
    }

    /// Series in data units.
    fn column(&self, ticker: &str) -> PyResult<Vec<f64>> {
        let i = self.panel.index_of(ticker).map_err(err)?;
        Ok((0..self.panel.nobs()).map(|t| self.panel.locations[i] + self.panel.scales[i] * self.panel.values[(t, i)]).collect())
    }

    fn to_csv(&self) -> String {
        dataset::format_panel(&self.panel)
    }

    fn __len__(&self) -> usize {
        self.panel.nobs()
    }

    fn __repr__(&self) -> String {
        format!("Panel({} quarters x {} series)", self.panel.nobs(), self.panel.nseries())
    }
}

/// Reads a data table and its metadata and applies the declared transforms.
#[pyfunction]
fn load_panel(data: PathBuf, meta: PathBuf) -> PyResult<Panel> {
    let (panel, meta) = dataset::load_panel(&data, &meta).map_err(err)?;
    Ok(Panel { panel, meta })
}

/// Simulates a panel from a DGP specification (`key = value` lines).
/// Returns the panel and a dict of true paths.
#[pyfunction]
#[pyo3(signature = (spec = "", seed = None))]
fn simulate<'py>(py: Python<'py>, spec: &str, seed: Option<u64>) -> PyResult<(Panel, Bound<'py, PyDict>)> {
    let mut spec = DgpSpec::parse(spec).map_err(err)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let sim = simulate_dfm(&spec).map_err(err)?;
    let t = &sim.truth;
    let d = PyDict::new(py);
    d.set_item("og", t.og.clone())?;
    d.set_item("po", t.po.clone())?;
    d.set_item("tau", t.tau.clone())?;
    d.set_item("factors", rows(&t.f))?;
    d.set_item("psi", t.psi.as_slice().to_vec())?;
    d.set_item("g", t.g.clone())?;
    d.set_item("s", t.s.clone())?;
    d.set_item("seed", spec.seed)?;
    Ok((Panel { panel: sim.panel, meta: sim.meta }, d))
}

/// Estimated factor model, Covid adjustment and trend-cycle split.
#[pyclass(module = "potgap_py")]
pub struct Fit {
    bundle: FitBundle,
}

impl Fit {
    fn series(&self, ticker: Option<&str>) -> PyResult<usize> {
        let p = &self.bundle.dfm.panel;
        match ticker {
            Some(t) => p.index_of(t).map_err(err),
            None => Ok(p.index_of("GDP").unwrap_or(0)),
        }
    }
}

fn response<'py>(py: Python<'py>, r: &GirfResult) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("shocked", r.shocked_response.clone())?;
    d.set_item("common", rows(&r.common))?;
    d.set_item("factors", rows(&r.factors))?;
    d.set_item("po", r.po.clone())?;
    d.set_item("og", r.og.clone())?;
    Ok(d)
}

#[pymethods]
impl Fit {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Fit> {
        Ok(Fit { bundle: FitBundle::load(&path).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.bundle.save(&path).map_err(err)
    }

    #[getter]
    fn q(&self) -> usize {
        self.bundle.dfm.params.q
    }

    #[getter]
    fn p(&self) -> usize {
        self.bundle.dfm.params.p
    }

    #[getter]
    fn loglik_path(&self) -> Vec<f64> {
        self.bundle.dfm.loglik_path.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.bundle.dfm.converged
    }

    #[getter]
    fn dates(&self) -> Vec<String> {
        self.bundle.dfm.panel.dates.iter().map(|d| d.to_string()).collect()
    }

    #[getter]
    fn psi(&self) -> Vec<f64> {
        self.bundle.trend.psi.as_slice().to_vec()
    }

    fn factors(&self) -> Vec<Vec<f64>> {
        rows(&self.bundle.dfm.factors())
    }

    #[pyo3(signature = (series = None))]
    fn output_gap(&self, series: Option<&str>) -> PyResult<Vec<f64>> {
        let i = self.series(series)?;
        Ok(output_gap(&self.bundle.dfm, &self.bundle.trend, i))
    }

    #[pyo3(signature = (series = None))]
    fn potential_output(&self, series: Option<&str>) -> PyResult<Vec<f64>> {
        let i = self.series(series)?;
        Ok(potential_output(&self.bundle.dfm, &self.bundle.trend, i))
    }

    /// Components in data units; `mode` is level, yoy or qoq_ann.
    #[pyo3(signature = (series = None, mode = "level"))]
    fn decompose<'py>(&self, py: Python<'py>, series: Option<&str>, mode: &str) -> PyResult<Bound<'py, PyDict>> {
        let i = self.series(series)?;
        let mode: DecompMode = mode.parse().map_err(err)?;
        let c = decompose_series(&self.bundle.dfm, &self.bundle.trend, i, mode).map_err(err)?;
        let d = PyDict::new(py);
        for (k, v) in [("data", c.data), ("secular", c.secular), ("trend", c.trend), ("cycle", c.cycle), ("covid", c.covid), ("idio", c.idio)] {
            d.set_item(k, v)?;
        }
        Ok(d)
    }

    #[pyo3(signature = (shock, size = 1.0, horizon = 20, series = None))]
    fn girf<'py>(&self, py: Python<'py>, shock: &str, size: f64, horizon: usize, series: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let i = self.series(series)?;
        let r = analysis::girf(&self.bundle.dfm, &self.bundle.trend, shock, size, horizon, i).map_err(err)?;
        response(py, &r)
    }

    #[pyo3(signature = (constrained, path, horizon = 20, series = None))]
    fn scenario<'py>(&self, py: Python<'py>, constrained: &str, path: Vec<f64>, horizon: usize, series: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let i = self.series(series)?;
        let r = conditional_forecast(&self.bundle.dfm, &self.bundle.trend, constrained, &path, horizon, i).map_err(err)?;
        response(py, &r)
    }

    /// Bootstrap bands for the gap and potential output.
    #[pyo3(signature = (reps = 500, seed = 1, jobs = 0, series = None))]
    fn bands<'py>(&self, py: Python<'py>, reps: usize, seed: u64, jobs: usize, series: Option<&str>) -> PyResult<Bound<'py, PyDict>> {
        let i = self.series(series)?;
        let opts = BootstrapOptions { reps, seed, jobs, ..BootstrapOptions::default() };
        let b = py.detach(|| bootstrap_bands(&self.bundle.dfm, &self.bundle.trend, i, &opts)).map_err(err)?;
        let d = PyDict::new(py);
        for (name, s) in [("og", &b.og), ("po", &b.po)] {
            d.set_item(name, s.point.clone())?;
            d.set_item(format!("{name}_sd"), s.sd.clone())?;
            d.set_item(format!("{name}_lo68"), s.lo68.clone())?;
            d.set_item(format!("{name}_hi68"), s.hi68.clone())?;
            d.set_item(format!("{name}_lo84"), s.lo84.clone())?;
            d.set_item(format!("{name}_hi84"), s.hi84.clone())?;
        }
        d.set_item("failures", b.failures)?;
        Ok(d)
    }

    fn __repr__(&self) -> String {
        format!("Fit(q={}, p={}, {} quarters)", self.bundle.dfm.params.q, self.bundle.dfm.params.p, self.bundle.dfm.nobs())
    }
}

/// Estimates the full model; `config` holds `key = value` settings (q, p, covid_mode, ...).
#[pyfunction]
#[pyo3(signature = (panel, config = ""))]
fn estimate(py: Python<'_>, panel: &Panel, config: &str) -> PyResult<Fit> {
    let cfg = RunConfig::parse(config).map_err(err)?;
    let est = cfg.estimate;
    let raw = panel.panel.raw();
    let (dfm, trend) = py.detach(|| estimate_all(&raw, &panel.meta, &est)).map_err(err)?;
    Ok(Fit { bundle: FitBundle { config: est, dfm, trend } })
}

/// Univariate filter; returns (trend, cycle).
#[pyfunction]
#[pyo3(signature = (y, method, params = None))]
fn filter(y: Vec<f64>, method: &str, params: Option<Vec<(String, String)>>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m: FilterMethod = method.parse().map_err(err)?;
    let mut par = FilterParams::default();
    for (k, v) in params.unwrap_or_default() {
        par.set(&k, &v).map_err(err)?;
    }
    let r = apply_filter(m, &y, &par).map_err(err)?;
    Ok((r.trend, r.cycle))
}

/// Relative RMSE and Diebold-Mariano tests of two forecast error series.
#[pyfunction]
fn forecast_eval<'py>(py: Python<'py>, bench: Vec<f64>, alt: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let e = analysis::forecast_eval(&bench, &alt).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("rel_rmse", e.rel_rmse)?;
    d.set_item("dm_stat", e.dm_stat)?;
    d.set_item("dm_pvalue", e.dm_pvalue)?;
    d.set_item("dm_stat_harvey", e.dm_stat_harvey)?;
    d.set_item("dm_pvalue_harvey", e.dm_pvalue_harvey)?;
    d.set_item("nobs", e.nobs)?;
    Ok(d)
}

#[pymodule]
fn potgap_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_class::<Fit>()?;
    m.add_function(wrap_pyfunction!(load_panel, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(estimate, m)?)?;
    m.add_function(wrap_pyfunction!(filter, m)?)?;
    m.add_function(wrap_pyfunction!(forecast_eval, m)?)?;
    Ok(())
}
