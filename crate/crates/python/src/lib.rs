//! Python bindings: datasets, grids, losses, metrics and the hazard network.

use std::sync::Arc;

use dcsurv::data::{self, CensoringMode, DatasetSchema, SyntheticSpec, TimeDistribution};
use dcsurv::grids::{self, GridSpec};
use dcsurv::losses::{self, LossConfig, MaskVariant};
use dcsurv::metrics::{self, CdaucOptions, MetricOptions};
use dcsurv::model::{self, ModelConfig, TrainConfig};
use dcsurv::{config, Error, SurvivalCurve, SurvivalRecord};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned + Default>(obj: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(obj) = obj else {
        return Ok(T::default());
    };
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn from_name<T: DeserializeOwned>(name: &str) -> PyResult<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn curves(grid: &TimeGrid, survival: Vec<Vec<f64>>) -> PyResult<Vec<SurvivalCurve>> {
    survival
        .into_iter()
        .map(|row| SurvivalCurve::new(grid.inner.clone(), row).map_err(err))
        .collect()
}

/// Increasing prediction times.
#[pyclass(frozen, module = "dcsurv")]
struct TimeGrid {
    inner: Arc<dcsurv::TimeGrid>,
}

#[pymethods]
impl TimeGrid {
    #[new]
    #[pyo3(signature = (nodes, spacing = "linear"))]
    fn new(nodes: Vec<f64>, spacing: &str) -> PyResult<Self> {
        let grid = dcsurv::TimeGrid::new(nodes, from_name(spacing)?).map_err(err)?;
        Ok(Self { inner: Arc::new(grid) })
    }

    #[getter]
    fn nodes(&self) -> Vec<f64> {
        self.inner.nodes().to_vec()
    }

    #[getter]
    fn spacing(&self) -> String {
        format!("{:?}", self.inner.spacing()).to_lowercase()
    }

    fn discretize(&self, t: f64) -> usize {
        self.inner.discretize(t)
    }

    /// Survival curve `prod (1 - h)` from one hazard sequence.
    fn survival(&self, hazards: Vec<f64>) -> PyResult<Vec<f64>> {
        let h = dcsurv::HazardSequence::new(self.inner.clone(), hazards).map_err(err)?;
        Ok(dcsurv::survival_from_hazards(&h).values().to_vec())
    }

    /// Linear interpolation of a curve on this grid.
    fn interpolate(&self, values: Vec<f64>, times: Vec<f64>) -> PyResult<Vec<f64>> {
        let c = SurvivalCurve::new(self.inner.clone(), values).map_err(err)?;
        Ok(dcsurv::interpolate_curve(&c, &times))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("TimeGrid(spacing={:?}, nodes={:?})", self.spacing(), self.inner.nodes())
    }
}

/// Right-censored records with numeric features.
#[pyclass(frozen, module = "dcsurv")]
struct SurvivalDataset {
    inner: dcsurv::SurvivalDataset,
}

#[pymethods]
impl SurvivalDataset {
    #[new]
    #[pyo3(signature = (times, events, features = None, feature_names = None))]
    fn new(
        times: Vec<f64>,
        events: Vec<bool>,
        features: Option<Vec<Vec<f64>>>,
        feature_names: Option<Vec<String>>,
    ) -> PyResult<Self> {
        if times.len() != events.len() {
            return Err(PyValueError::new_err("times and events differ in length"));
        }
        let features = features.unwrap_or_else(|| vec![Vec::new(); times.len()]);
        if features.len() != times.len() {
            return Err(PyValueError::new_err("features and times differ in length"));
        }
        let p = features.first().map_or(0, Vec::len);
        let names = feature_names.unwrap_or_else(|| (0..p).map(|j| format!("x{j}")).collect());
        let records = features
            .into_iter()
            .zip(times.into_iter().zip(events))
            .map(|(x, (t, d))| SurvivalRecord::new(x, t, d))
            .collect::<dcsurv::Result<Vec<_>>>()
            .map_err(err)?;
        let inner = dcsurv::SurvivalDataset::new(records, names).map_err(err)?;
        Ok(Self { inner })
    }

    /// Reads a CSV and standardizes it with statistics fitted on the file.
    #[staticmethod]
    #[pyo3(signature = (path, time_column = "time", event_column = "event", categorical_columns = Vec::new()))]
    fn from_csv(
        path: &str,
        time_column: &str,
        event_column: &str,
        categorical_columns: Vec<String>,
    ) -> PyResult<Self> {
        let schema = DatasetSchema {
            time_column: time_column.into(),
            event_column: event_column.into(),
            categorical_columns,
            ..DatasetSchema::default()
        };
        let table = data::load_csv(path, &schema).map_err(err)?;
        let stats = data::fit_preprocess(&table).map_err(err)?;
        let inner = data::apply_preprocess(&table, &stats).map_err(err)?;
        Ok(Self { inner })
    }

    /// Synthetic data. `distribution` is uniform, weibull or two_cluster;
    /// `censoring` is flags, late_dropout or competing.
    #[staticmethod]
    #[pyo3(signature = (n, censoring_rate, seed = 0, distribution = "uniform", censoring = "flags", strength = 1.0))]
    fn synthetic(
        n: usize,
        censoring_rate: f64,
        seed: u64,
        distribution: &str,
        censoring: &str,
        strength: f64,
    ) -> PyResult<Self> {
        let mut spec = SyntheticSpec::uniform(n, censoring_rate, seed);
        spec.distribution = match distribution {
            "uniform" => spec.distribution,
            "weibull" => TimeDistribution::Weibull {
                shape: 1.5,
                scale: 20.0,
                coefficients: vec![0.8, -0.5, 0.0],
            },
            "two_cluster" => TimeDistribution::two_cluster(),
            other => return Err(PyValueError::new_err(format!("unknown distribution {other:?}"))),
        };
        spec.censoring = match censoring {
            "flags" => CensoringMode::IndependentFlags,
            "late_dropout" => CensoringMode::LateDropout { strength },
            "competing" => CensoringMode::Competing,
            other => return Err(PyValueError::new_err(format!("unknown censoring {other:?}"))),
        };
        let inner = data::generate_synthetic(&spec).map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.times()
    }

    #[getter]
    fn events(&self) -> Vec<bool> {
        self.inner.events()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.inner.records().iter().map(|r| r.features.clone()).collect()
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn censoring_rate(&self) -> f64 {
        self.inner.censoring_rate()
    }

    fn select(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyValueError::new_err(format!("index {i} out of range")));
        }
        Ok(Self { inner: self.inner.select(&indices) })
    }

    /// Stratified `(train, test)` split.
    #[pyo3(signature = (test_fraction, seed = 0))]
    fn split(&self, test_fraction: f64, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = data::stratified_split(&self.inner, test_fraction, seed).map_err(err)?;
        Ok((Self { inner: a }, Self { inner: b }))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "SurvivalDataset(n={}, features={}, censoring_rate={:.3})",
            self.inner.len(),
            self.inner.num_features(),
            self.inner.censoring_rate()
        )
    }
}

#[pyfunction]
#[pyo3(signature = (data, spacing = "quantile", num_nodes = 10, t_max = None, t_min = None))]
fn build_grid(
    data: &SurvivalDataset,
    spacing: &str,
    num_nodes: usize,
    t_max: Option<f64>,
    t_min: Option<f64>,
) -> PyResult<TimeGrid> {
    let spec = GridSpec { spacing: from_name(spacing)?, num_nodes, t_max, t_min };
    let grid = grids::build_grid(&spec, &data.inner).map_err(err)?;
    Ok(TimeGrid { inner: Arc::new(grid) })
}

/// Kaplan-Meier estimate as `(event_times, survival)`.
#[pyfunction]
fn kaplan_meier(times: Vec<f64>, events: Vec<bool>) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let km = dcsurv::survival::kaplan_meier_from(&times, &events).map_err(err)?;
    Ok((km.event_times().to_vec(), km.survival().to_vec()))
}

/// Ordered comparison pairs; `variant` is event_event or event_any.
#[pyfunction]
#[pyo3(signature = (times, events, variant = "event_any"))]
fn count_pairs(times: Vec<f64>, events: Vec<bool>, variant: &str) -> PyResult<u64> {
    if times.len() != events.len() {
        return Err(PyValueError::new_err("times and events differ in length"));
    }
    Ok(losses::count_pairs(&times, &events, from_name(variant)?))
}

#[pyfunction]
fn comparison_summary(py: Python<'_>, data: &SurvivalDataset) -> PyResult<Py<PyAny>> {
    to_py(py, &losses::comparison_factor(&data.inner))
}

#[pyfunction]
#[pyo3(signature = (censoring_rate, variant = "event_any"))]
fn comparison_probability(censoring_rate: f64, variant: &str) -> PyResult<f64> {
    let v: MaskVariant = from_name(variant)?;
    losses::estimate_comparison_probability(censoring_rate, v).map_err(err)
}

/// Combined ranked-probability and kernel loss of survival rows on `grid`.
#[pyfunction]
#[pyo3(signature = (survival, data, grid, config = None))]
fn combined_loss(
    survival: Vec<Vec<f64>>,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    config: Option<&Bound<'_, PyDict>>,
) -> PyResult<f64> {
    let cfg: LossConfig = from_py(config)?;
    let c = curves(grid, survival)?;
    losses::combined_loss(&c, &data.inner, &grid.inner, &cfg).map_err(err)
}

#[pyfunction]
fn rps_loss(survival: Vec<Vec<f64>>, data: &SurvivalDataset, grid: &TimeGrid) -> PyResult<f64> {
    let c = curves(grid, survival)?;
    losses::rps_loss(&c, &data.inner, &grid.inner).map_err(err)
}

#[pyfunction]
fn cindex_td(survival: Vec<Vec<f64>>, data: &SurvivalDataset, grid: &TimeGrid) -> PyResult<f64> {
    metrics::cindex_td(&curves(grid, survival)?, &data.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (survival, data, grid, tau1 = None, tau2 = None, ipcw = false))]
fn cdauc(
    survival: Vec<Vec<f64>>,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    tau1: Option<f64>,
    tau2: Option<f64>,
    ipcw: bool,
) -> PyResult<f64> {
    let opts = CdaucOptions {
        tau1,
        tau2,
        weighting: if ipcw { metrics::AucWeighting::Ipcw } else { metrics::AucWeighting::Uniform },
    };
    metrics::cdauc(&curves(grid, survival)?, &data.inner, &opts).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (survival, data, grid, num_bins = 10))]
fn ddc(survival: Vec<Vec<f64>>, data: &SurvivalDataset, grid: &TimeGrid, num_bins: usize) -> PyResult<f64> {
    metrics::ddc(&curves(grid, survival)?, &data.inner, num_bins).map_err(err)
}

/// Point metrics plus bootstrap summaries, as a dict.
#[pyfunction]
#[pyo3(signature = (survival, data, grid, options = None, seed = 0))]
fn evaluate(
    py: Python<'_>,
    survival: Vec<Vec<f64>>,
    data: &SurvivalDataset,
    grid: &TimeGrid,
    options: Option<&Bound<'_, PyDict>>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let opts: MetricOptions = from_py(options)?;
    let report = metrics::evaluate_curves(&curves(grid, survival)?, &data.inner, &opts, seed).map_err(err)?;
    to_py(py, &report)
}

/// Trained hazard network.
#[pyclass(frozen, module = "dcsurv")]
struct Model {
    inner: model::TrainedModel,
}

#[pymethods]
impl Model {
    /// Trains on `data`; `model` and `train` are config dicts using the same
    /// keys as the TOML run file. Returns `(model, training_log)`.
    #[staticmethod]
    #[pyo3(signature = (data, model = None, train = None))]
    fn train(
        py: Python<'_>,
        data: &SurvivalDataset,
        model: Option<&Bound<'_, PyDict>>,
        train: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<(Self, Py<PyAny>)> {
        let mcfg: ModelConfig = from_py(model)?;
        let tcfg: TrainConfig = from_py(train)?;
        let (inner, log) = model::train(&data.inner, &mcfg, &tcfg).map_err(err)?;
        Ok((Self { inner }, to_py(py, &log)?))
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let (inner, _) = config::load_model(path).map_err(err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        config::save_model(&self.inner, path, &DatasetSchema::default(), &MetricOptions::default(), None)
            .map_err(err)?;
        Ok(())
    }

    #[getter]
    fn grid(&self) -> TimeGrid {
        TimeGrid { inner: self.inner.grid().clone() }
    }

    #[getter]
    fn feature_names(&self) -> Vec<String> {
        self.inner.feature_names().to_vec()
    }

    #[getter]
    fn num_parameters(&self) -> usize {
        self.inner.network().num_scalars()
    }

    /// Survival rows for a dataset with matching feature names.
    fn predict(&self, data: &SurvivalDataset) -> PyResult<Vec<Vec<f64>>> {
        let c = self.inner.predict(&data.inner).map_err(err)?;
        Ok(c.iter().map(|c| c.values().to_vec()).collect())
    }

    /// Survival rows for raw feature vectors.
    fn predict_features(&self, rows: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
        let c = self.inner.predict_features(&rows).map_err(err)?;
        Ok(c.iter().map(|c| c.values().to_vec()).collect())
    }
}

#[pymodule(name = "dcsurv")]
fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TimeGrid>()?;
    m.add_class::<SurvivalDataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(build_grid, m)?)?;
    m.add_function(wrap_pyfunction!(kaplan_meier, m)?)?;
    m.add_function(wrap_pyfunction!(count_pairs, m)?)?;
    m.add_function(wrap_pyfunction!(comparison_summary, m)?)?;
    m.add_function(wrap_pyfunction!(comparison_probability, m)?)?;
    m.add_function(wrap_pyfunction!(combined_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rps_loss, m)?)?;
    m.add_function(wrap_pyfunction!(cindex_td, m)?)?;
    m.add_function(wrap_pyfunction!(cdauc, m)?)?;
    m.add_function(wrap_pyfunction!(ddc, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    Ok(())
}
