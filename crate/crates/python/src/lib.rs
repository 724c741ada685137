//! Python bindings for building corpora and for training and scoring the
//! forecaster.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Deserialize;

use mpstn::folding::{self, build_dataset, Datasets, PredictionTime, SampleSet, SplitSpec};
use mpstn::model::{ModelConfig, Mpstn, NormalizedAdjacency, Variant};
use mpstn::synthgen::{GenConfig, NetworkSpec};
use mpstn::tensor::Tensor;
use mpstn::trainer::{self, BaselineKind, Checkpoint, EvalReport, ModelPredictor, TrainConfig, TrainError};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn train_err(e: TrainError) -> PyErr {
    match e {
        TrainError::Diverged { .. } => PyRuntimeError::new_err(e.to_string()),
        TrainError::Io(_) => PyIOError::new_err(e.to_string()),
        other => value_err(other),
    }
}

/// Deserialises keyword arguments through JSON so unknown keys are rejected
/// exactly as in config files.
fn from_kwargs<T: DeserializeOwned + Default>(kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let Some(kw) = kwargs else {
        return Ok(T::default());
    };
    let json: String = kw.py().import("json")?.call_method1("dumps", (kw,))?.extract()?;
    serde_json::from_str(&json).map_err(value_err)
}

fn report_dicts<'py>(py: Python<'py>, reports: &[EvalReport]) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut rows = Vec::new();
    for r in reports {
        for h in &r.horizons {
            let d = PyDict::new(py);
            d.set_item("variant", &r.variant)?;
            d.set_item("horizon_min", h.horizon_min)?;
            d.set_item("mae", h.mae)?;
            d.set_item("rmse", h.rmse)?;
            rows.push(d);
        }
    }
    Ok(rows)
}

fn flatten(nested: Vec<Vec<Vec<Vec<f64>>>>) -> PyResult<Tensor> {
    let s = nested.len();
    let c = nested.first().map_or(0, Vec::len);
    let p = nested.first().and_then(|x| x.first()).map_or(0, Vec::len);
    let t = nested.first().and_then(|x| x.first()).and_then(|x| x.first()).map_or(0, Vec::len);
    let data: Vec<f64> = nested.into_iter().flatten().flatten().flatten().collect();
    Tensor::new(vec![s, c, p, t], data).map_err(|_| value_err("window must be a regular [stations][2][periods][intervals] nested list"))
}

fn nest(t: &Tensor) -> Vec<Vec<f64>> {
    let cols = t.shape()[1..].iter().product::<usize>().max(1);
    t.data().chunks(cols).map(<[f64]>::to_vec).collect()
}

/// Mean absolute error of two equal-length sequences.
#[pyfunction]
fn mae(pred: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    trainer::mae(&pred, &actual).map_err(value_err)
}

/// Root mean squared error of two equal-length sequences.
#[pyfunction]
fn rmse(pred: Vec<f64>, actual: Vec<f64>) -> PyResult<f64> {
    trainer::rmse(&pred, &actual).map_err(value_err)
}

/// Learning rate in effect during 0-based `epoch`.
#[pyfunction]
fn lr_at_epoch(base_lr: f64, epoch: usize) -> f64 {
    mpstn::tensor::lr_at_epoch(base_lr, epoch)
}

/// Symmetric degree-normalised adjacency with self-loops, as nested rows.
#[pyfunction]
fn normalize_adjacency(stations: usize, edges: Vec<(usize, usize)>) -> PyResult<Vec<Vec<f64>>> {
    let net = NetworkSpec::new(stations, edges).map_err(value_err)?;
    Ok(nest(NormalizedAdjacency::from_network(&net).as_tensor()))
}

/// Folds the `periods * intervals_per_day` values before `index` into
/// `[2][periods][intervals_per_day]`.
#[pyfunction]
fn fold_window(inflow: Vec<f64>, outflow: Vec<f64>, intervals_per_day: usize, index: usize, periods: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let start = chrono::NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
    let series = folding::FlowSeries::new("s", start, intervals_per_day, inflow, outflow).map_err(value_err)?;
    let at = series.time_at(index);
    let w = folding::fold_window(&series, at, periods).map_err(value_err)?;
    Ok(w.data()
        .chunks(periods * intervals_per_day)
        .map(|c| c.chunks(intervals_per_day).map(<[f64]>::to_vec).collect())
        .collect())
}

/// Station flows with their weather calendar and graph.
#[pyclass(frozen, module = "mpstn_py")]
struct Corpus {
    inner: Arc<folding::Corpus>,
}

#[pymethods]
impl Corpus {
    /// Synthetic corpus; keyword arguments override generator defaults.
    #[staticmethod]
    #[pyo3(signature = (**kwargs))]
    fn generate(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let config: GenConfig = from_kwargs(kwargs)?;
        let corpus = py
            .detach(|| mpstn::synthgen::generate(&config).map_err(|e| e.to_string()))
            .map_err(value_err)?;
        let inner = corpus.into_corpus().map_err(value_err)?;
        Ok(Self { inner: Arc::new(inner) })
    }

    /// Reads the corpus CSV files written by `save` or `mpstn gen`.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        let inner = mpstn::io::load_corpus(&dir).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(Self { inner: Arc::new(inner) })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        std::fs::create_dir_all(&dir)?;
        let c = &self.inner;
        mpstn::io::save_corpus(&dir, &c.stations, &c.weather, &c.network).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Ok(())
    }

    #[getter]
    fn station_ids(&self) -> Vec<String> {
        self.inner.stations.iter().map(|s| s.station_id.clone()).collect()
    }

    #[getter]
    fn intervals_per_day(&self) -> usize {
        self.inner.intervals_per_day()
    }

    #[getter]
    fn days(&self) -> usize {
        self.inner.days()
    }

    #[getter]
    fn edges(&self) -> Vec<(usize, usize)> {
        self.inner.network.edges().to_vec()
    }

    fn inflow(&self, station: usize) -> PyResult<Vec<f64>> {
        self.station(station).map(|s| s.inflow.clone())
    }

    fn outflow(&self, station: usize) -> PyResult<Vec<f64>> {
        self.station(station).map(|s| s.outflow.clone())
    }

    /// `(date, is_rain)` pairs in date order.
    fn rain(&self) -> Vec<(String, bool)> {
        self.inner.weather.rain.iter().map(|(d, r)| (d.to_string(), *r)).collect()
    }

    /// Back-to-back blocks of whole days for each split.
    #[pyo3(signature = (train_days=70, validation_days=7, test_days=13, periods=14, horizons=4, train_stride=1, validation_stride=1, test_stride=1))]
    #[allow(clippy::too_many_arguments)]
    fn split(
        &self,
        train_days: usize,
        validation_days: usize,
        test_days: usize,
        periods: usize,
        horizons: usize,
        train_stride: usize,
        validation_stride: usize,
        test_stride: usize,
    ) -> PyResult<Splits> {
        let spec = SplitSpec::consecutive(self.inner.start_date(), train_days, validation_days, test_days);
        let build = |stride| build_dataset(Arc::clone(&self.inner), &spec, periods, horizons, stride).map_err(value_err);
        let unstrided = build(1)?;
        Ok(Splits {
            datasets: Datasets {
                train: build(train_stride)?.train,
                validation: build(validation_stride)?.validation,
                test: build(test_stride)?.test,
            },
            baseline_train: unstrided.train,
        })
    }
}

impl Corpus {
    fn station(&self, i: usize) -> PyResult<&folding::FlowSeries> {
        self.inner
            .stations
            .get(i)
            .ok_or_else(|| value_err(format!("station {i} out of range")))
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields, default)]
struct ModelOptions {
    gnn_layers: usize,
    feature_dim: usize,
    weather_embed_dim: usize,
    variant: Variant,
}

impl Default for ModelOptions {
    fn default() -> Self {
        let m = ModelConfig::default();
        Self {
            gnn_layers: m.gnn_layers,
            feature_dim: m.feature_dim,
            weather_embed_dim: m.weather_embed_dim,
            variant: m.variant,
        }
    }
}

/// The three sample sets of one split over a shared corpus.
#[pyclass(frozen, module = "mpstn_py")]
struct Splits {
    datasets: Datasets,
    /// Every training prediction time, for fitting baselines.
    baseline_train: SampleSet,
}

#[pymethods]
impl Splits {
    /// Sample counts `(train, validation, test)`.
    fn sizes(&self) -> (usize, usize, usize) {
        let d = &self.datasets;
        (d.train.len(), d.validation.len(), d.test.len())
    }

    /// One sample as a dict with `date`, `interval`, `rain`, `window`
    /// (`[S][2][P][T]`) and `targets` (`[S][2][H]`).
    fn sample<'py>(&self, py: Python<'py>, split: &str, index: usize) -> PyResult<Bound<'py, PyDict>> {
        let set = self.set(split)?;
        if index >= set.len() {
            return Err(value_err(format!("index {index} out of range for {} samples", set.len())));
        }
        let s = set.sample(index);
        let shape = s.window.shape().to_vec();
        let (p, t) = (shape[2], shape[3]);
        let window: Vec<Vec<Vec<Vec<f64>>>> = s
            .window
            .data()
            .chunks(2 * p * t)
            .map(|st| st.chunks(p * t).map(|c| c.chunks(t).map(<[f64]>::to_vec).collect()).collect())
            .collect();
        let h = s.targets.shape()[2];
        let targets: Vec<Vec<Vec<f64>>> = s
            .targets
            .data()
            .chunks(2 * h)
            .map(|st| st.chunks(h).map(<[f64]>::to_vec).collect())
            .collect();
        let PredictionTime { date, interval } = s.prediction_time;
        let d = PyDict::new(py);
        d.set_item("date", date.to_string())?;
        d.set_item("interval", interval)?;
        d.set_item("rain", s.rain_flag)?;
        d.set_item("window", window)?;
        d.set_item("targets", targets)?;
        Ok(d)
    }

    /// Trains a model. `model` and `train` are dicts of overrides, e.g.
    /// `{"feature_dim": 128}` and `{"epochs": 30, "seed": 1}`.
    #[pyo3(signature = (model=None, train=None))]
    fn train(&self, py: Python<'_>, model: Option<&Bound<'_, PyDict>>, train: Option<&Bound<'_, PyDict>>) -> PyResult<Trained> {
        let options: ModelOptions = from_kwargs(model)?;
        let train_config: TrainConfig = from_kwargs(train)?;
        let corpus = self.datasets.train.corpus();
        let config = ModelConfig {
            periods: self.datasets.train.periods(),
            intervals_per_day: corpus.intervals_per_day(),
            stations: corpus.station_count(),
            gnn_layers: options.gnn_layers,
            feature_dim: options.feature_dim,
            weather_embed_dim: options.weather_embed_dim,
            horizons: self.datasets.train.horizons(),
            variant: options.variant,
        };
        let outcome = py
            .detach(|| trainer::train(&self.datasets, &config, &train_config))
            .map_err(train_err)?;
        Trained::new(outcome.checkpoint, outcome.log, corpus.network.clone())
    }

    /// Per-horizon scores of `historical_average` or `seasonal_naive`.
    #[pyo3(signature = (kind, split="test"))]
    fn baseline<'py>(&self, py: Python<'py>, kind: &str, split: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let kind: BaselineKind = kind.parse().map_err(train_err)?;
        let set = self.set(split)?;
        let report = py
            .detach(|| {
                let b = trainer::fit_baseline(kind, &self.baseline_train)?;
                trainer::evaluate(&b, set)
            })
            .map_err(train_err)?;
        report_dicts(py, &[report])
    }
}

impl Splits {
    fn set(&self, name: &str) -> PyResult<&SampleSet> {
        match name {
            "train" => Ok(&self.datasets.train),
            "validation" => Ok(&self.datasets.validation),
            "test" => Ok(&self.datasets.test),
            other => Err(value_err(format!("unknown split `{other}`"))),
        }
    }
}

/// A trained network with its normaliser and epoch log.
#[pyclass(frozen, module = "mpstn_py")]
struct Trained {
    checkpoint: Checkpoint,
    log: Vec<trainer::EpochRecord>,
    predictor: ModelPredictor,
}

impl Trained {
    fn new(checkpoint: Checkpoint, log: Vec<trainer::EpochRecord>, network: NetworkSpec) -> PyResult<Self> {
        let predictor = ModelPredictor::from_checkpoint(&checkpoint, NormalizedAdjacency::from_network(&network)).map_err(train_err)?;
        Ok(Self {
            checkpoint,
            log,
            predictor,
        })
    }
}

#[pymethods]
impl Trained {
    /// Restores a checkpoint written by `save` or the command-line tool.
    /// The station graph comes from `corpus`.
    #[staticmethod]
    fn load(path: PathBuf, corpus: &Corpus) -> PyResult<Self> {
        let checkpoint = trainer::load_checkpoint(&path).map_err(|e| PyIOError::new_err(e.to_string()))?;
        Self::new(checkpoint, Vec::new(), corpus.inner.network.clone())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.checkpoint.save(&path).map_err(|e| PyIOError::new_err(e.to_string()))
    }

    /// `(epoch, lr, train_l1, val_mae)` per epoch; empty for loaded checkpoints.
    #[getter]
    fn log(&self) -> Vec<(usize, f64, f64, f64)> {
        self.log.iter().map(|r| (r.epoch, r.lr, r.train_l1, r.val_mae)).collect()
    }

    #[getter]
    fn best_epoch(&self) -> usize {
        self.checkpoint.meta.epoch
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.checkpoint.params.numel()
    }

    /// Per-horizon MAE/RMSE in persons per interval.
    #[pyo3(signature = (splits, split="test"))]
    fn evaluate<'py>(&self, py: Python<'py>, splits: &Splits, split: &str) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let set = splits.set(split)?;
        let report = py.detach(|| trainer::evaluate(&self.predictor, set)).map_err(train_err)?;
        report_dicts(py, &[report])
    }

    /// Raw-unit forecasts `[S][2 * horizons]` (inflow horizons first) for a
    /// raw `[S][2][P][T]` window.
    fn predict(&self, window: Vec<Vec<Vec<Vec<f64>>>>, rain: u8) -> PyResult<Vec<Vec<f64>>> {
        let mut w = flatten(window)?;
        if w.shape()[0] != self.checkpoint.config.stations {
            return Err(value_err(format!(
                "window has {} stations, model expects {}",
                w.shape()[0],
                self.checkpoint.config.stations
            )));
        }
        let p = &self.predictor;
        p.normalizer.apply(&mut w);
        let mut out = p.model.predict(&w, rain).map_err(value_err)?;
        p.normalizer.invert(&mut out);
        Ok(nest(&out))
    }
}

/// Untrained network forward pass on an explicit graph, for experiments
/// with hand-built inputs.
#[pyfunction]
#[pyo3(signature = (window, edges, rain=0, seed=0, **model))]
fn forward(window: Vec<Vec<Vec<Vec<f64>>>>, edges: Vec<(usize, usize)>, rain: u8, seed: u64, model: Option<&Bound<'_, PyDict>>) -> PyResult<Vec<Vec<f64>>> {
    let w = flatten(window)?;
    let options: ModelOptions = from_kwargs(model)?;
    let shape = w.shape().to_vec();
    let config = ModelConfig {
        periods: shape[2],
        intervals_per_day: shape[3],
        stations: shape[0],
        gnn_layers: options.gnn_layers,
        feature_dim: options.feature_dim,
        weather_embed_dim: options.weather_embed_dim,
        variant: options.variant,
        ..ModelConfig::default()
    };
    let net = NetworkSpec::new(shape[0], edges).map_err(value_err)?;
    let m = Mpstn::new(config, NormalizedAdjacency::from_network(&net), seed).map_err(value_err)?;
    Ok(nest(&m.predict(&w, rain).map_err(value_err)?))
}

#[pymodule]
fn mpstn_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(mae, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_adjacency, m)?)?;
    m.add_function(wrap_pyfunction!(fold_window, m)?)?;
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_class::<Corpus>()?;
    m.add_class::<Splits>()?;
    m.add_class::<Trained>()?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
