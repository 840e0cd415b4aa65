//! Python bindings: generators, networks, training, metrics and the
//! experiment runner. Windows cross the boundary as flat `W x C` row-major
//! lists of floats.

use std::path::{Path, PathBuf};

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rcl_core::classifier::{
    fisher_diagonal, init_model, loss_and_gradient, train, Architecture, ConvLayerSpec,
    EWCPenalty, NetModel, Optimizer, TrainConfig,
};
use rcl_core::cli::{cmd_run, cmd_validate, RunOverrides};
use rcl_core::data::{
    fit_standardizer, synthesize_stream, window_trial, Provenance, StandardizationParams,
    SyntheticStreamConfig, TimeSeriesTrial, WindowedSample,
};
use rcl_core::eval::{confusion as confusion_matrix, metrics as metric_report};
use rcl_core::generator::{fit_generator, ClassGenerator, GenerationRequest};

/// `(lambda, theta_star, fisher)`
type EwcArgs = (f64, Vec<f64>, Vec<f64>);
/// `(class_id, trial_id, n_channels, values)`
type TrialTuple = (usize, usize, usize, Vec<f64>);

fn value_err(e: rcl_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn samples(
    windows: Vec<Vec<f64>>,
    window: usize,
    channels: usize,
    class_id: usize,
) -> PyResult<Vec<WindowedSample>> {
    windows
        .into_iter()
        .enumerate()
        .map(|(i, f)| {
            WindowedSample::new(f, window, channels, class_id, Provenance::Raw { trial_id: 0, start: i })
                .map_err(value_err)
        })
        .collect()
}

/// Generate trials from a synthetic stream config (JSON text; defaults when
/// omitted). Returns `(class_id, trial_id, n_channels, values)` tuples.
#[pyfunction]
#[pyo3(signature = (config_json=None))]
fn synthesize(config_json: Option<&str>) -> PyResult<Vec<TrialTuple>> {
    let cfg = match config_json {
        Some(text) => SyntheticStreamConfig::from_json(text).map_err(value_err)?,
        None => SyntheticStreamConfig::default(),
    };
    let trials = synthesize_stream(&cfg).map_err(value_err)?;
    Ok(trials
        .iter()
        .map(|t| (t.class_id, t.trial_id, t.n_channels(), t.values().to_vec()))
        .collect())
}

/// Cut a `T x C` row-major series into flat windows.
#[pyfunction]
fn window_series(values: Vec<f64>, n_channels: usize, window: usize, stride: usize) -> PyResult<Vec<Vec<f64>>> {
    let trial = TimeSeriesTrial::new(0, 0, n_channels, values, 1.0).map_err(value_err)?;
    let w = window_trial(&trial, window, stride).map_err(value_err)?;
    Ok(w.into_iter().map(|s| s.features).collect())
}

#[pyclass(module = "rcl")]
struct Standardizer {
    inner: StandardizationParams,
}

#[pymethods]
impl Standardizer {
    #[new]
    fn new(windows: Vec<Vec<f64>>) -> PyResult<Self> {
        let dim = windows.first().map_or(0, Vec::len);
        let inner = fit_standardizer(&samples(windows, dim, 1, 0)?).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn mean(&self) -> Vec<f64> {
        self.inner.mean.clone()
    }

    #[getter]
    fn std(&self) -> Vec<f64> {
        self.inner.std.clone()
    }

    fn transform(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.transform(&x).map_err(value_err)
    }

    fn inverse(&self, z: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.inverse(&z).map_err(value_err)
    }
}

/// Per-class SMOTE generator over stored windows.
#[pyclass(module = "rcl")]
struct Generator {
    inner: ClassGenerator,
}

#[pymethods]
impl Generator {
    /// `window` defaults to the window length (single channel).
    #[new]
    #[pyo3(signature = (windows, class_id=0, k=5, memory_budget=None, seed=0, channels=1))]
    fn new(
        windows: Vec<Vec<f64>>,
        class_id: usize,
        k: usize,
        memory_budget: Option<usize>,
        seed: u64,
        channels: usize,
    ) -> PyResult<Self> {
        if channels == 0 {
            return Err(PyValueError::new_err("channels must be positive"));
        }
        let window = windows.first().map_or(0, Vec::len) / channels;
        let data = samples(windows, window, channels, class_id)?;
        let inner = fit_generator(class_id, &data, k, memory_budget, seed).map_err(value_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: ClassGenerator::from_json(text).map_err(value_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(value_err)
    }

    #[getter]
    fn memory_len(&self) -> usize {
        self.inner.memory_len()
    }

    #[getter]
    fn effective_k(&self) -> usize {
        self.inner.effective_k()
    }

    fn memory(&self) -> Vec<Vec<f64>> {
        self.inner.memory().to_vec()
    }

    fn nearest_neighbors(&self, index: usize) -> PyResult<Vec<usize>> {
        self.inner.nearest_neighbors(index).map_err(value_err)
    }

    /// Returns `(features, anchor, neighbor)` per synthetic window.
    #[pyo3(signature = (count, seed=None))]
    fn generate(&self, count: usize, seed: Option<u64>) -> PyResult<Vec<(Vec<f64>, usize, usize)>> {
        let req = GenerationRequest::new(count).map_err(value_err)?;
        let out = match seed {
            Some(s) => self.inner.generate_with_seed(req, s),
            None => self.inner.generate(req),
        }
        .map_err(value_err)?;
        Ok(out
            .into_iter()
            .map(|s| match s.source {
                Provenance::Synthetic { anchor, neighbor } => (s.features, anchor, neighbor),
                Provenance::Raw { .. } => unreachable!("generator output is synthetic"),
            })
            .collect())
    }
}

/// Dense or conv classifier with a flat parameter vector.
#[pyclass(module = "rcl")]
struct Model {
    inner: NetModel,
}

fn architecture(kind: &str, hidden: (usize, usize), conv: Option<Vec<(usize, usize, usize)>>) -> PyResult<Architecture> {
    match kind {
        "dense" => Ok(Architecture::dense(hidden.0, hidden.1)),
        "linear" => Ok(Architecture::linear()),
        "conv" => {
            let layers: Vec<ConvLayerSpec> = conv
                .unwrap_or_else(|| vec![(16, 5, 1), (32, 5, 1)])
                .into_iter()
                .map(|(out_channels, kernel, stride)| ConvLayerSpec {
                    out_channels,
                    kernel,
                    stride,
                })
                .collect();
            let pair: [ConvLayerSpec; 2] = layers
                .try_into()
                .map_err(|_| PyValueError::new_err("conv needs exactly two (out_channels, kernel, stride) layers"))?;
            Ok(Architecture::conv(pair, hidden.0, hidden.1))
        }
        other => Err(PyValueError::new_err(format!("unknown kind {other:?}; use dense, conv or linear"))),
    }
}

fn penalty(ewc: Option<EwcArgs>) -> PyResult<Option<EWCPenalty>> {
    ewc.map(|(lambda, theta_star, fisher)| EWCPenalty::new(lambda, theta_star, fisher).map_err(value_err))
        .transpose()
}

impl Model {
    fn batch(&self, windows: Vec<Vec<f64>>) -> PyResult<Vec<WindowedSample>> {
        let (w, c) = self.inner.spec().input_shape;
        samples(windows, w, c, 0)
    }
}

#[pymethods]
impl Model {
    #[new]
    #[pyo3(signature = (window, channels, n_classes, kind="dense", hidden=(64, 32), conv=None, seed=0))]
    fn new(
        window: usize,
        channels: usize,
        n_classes: usize,
        kind: &str,
        hidden: (usize, usize),
        conv: Option<Vec<(usize, usize, usize)>>,
        seed: u64,
    ) -> PyResult<Self> {
        let spec = architecture(kind, hidden, conv)?.spec((window, channels), n_classes, seed);
        Ok(Self {
            inner: init_model(&spec).map_err(value_err)?,
        })
    }

    #[getter]
    fn params(&self) -> Vec<f64> {
        self.inner.params.clone()
    }

    #[setter]
    fn set_params(&mut self, params: Vec<f64>) -> PyResult<()> {
        self.inner = NetModel::from_parts(self.inner.spec().clone(), params).map_err(value_err)?;
        Ok(())
    }

    #[getter]
    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    #[getter]
    fn n_classes(&self) -> usize {
        self.inner.n_classes()
    }

    fn probabilities(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.probabilities(&x).map_err(value_err)
    }

    fn predict(&self, windows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
        windows
            .iter()
            .map(|x| {
                let p = self.inner.probabilities(x).map_err(value_err)?;
                Ok(rcl_core::classifier::argmax(&p))
            })
            .collect()
    }

    /// Mean cross-entropy (plus the EWC term when `ewc = (lambda,
    /// theta_star, fisher)` is given) and its gradient.
    #[pyo3(signature = (windows, labels, ewc=None))]
    fn loss_and_gradient(
        &self,
        windows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        ewc: Option<EwcArgs>,
    ) -> PyResult<(f64, Vec<f64>)> {
        let batch = self.batch(windows)?;
        let pen = penalty(ewc)?;
        loss_and_gradient(&self.inner, &batch, &labels, pen.as_ref()).map_err(value_err)
    }

    fn fisher(&self, windows: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<Vec<f64>> {
        let batch = self.batch(windows)?;
        fisher_diagonal(&self.inner, &batch, &labels).map_err(value_err)
    }

    /// Train in place; returns the per-epoch mean objective. `momentum=None`
    /// selects plain SGD.
    #[pyo3(signature = (windows, labels, epochs=100, batch_size=32, learning_rate=0.01, momentum=Some(0.9), shuffle_seed=0, ewc=None))]
    #[allow(clippy::too_many_arguments)]
    fn train(
        &mut self,
        windows: Vec<Vec<f64>>,
        labels: Vec<usize>,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        momentum: Option<f64>,
        shuffle_seed: u64,
        ewc: Option<EwcArgs>,
    ) -> PyResult<Vec<f64>> {
        let batch = self.batch(windows)?;
        let pen = penalty(ewc)?;
        let cfg = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            optimizer: momentum.map_or(Optimizer::Sgd, |beta| Optimizer::SgdMomentum { beta }),
            shuffle_seed,
        };
        let trained = train(&self.inner, &batch, &labels, &cfg, pen.as_ref()).map_err(value_err)?;
        self.inner = trained.model;
        Ok(trained.loss_history)
    }
}

#[pyfunction]
fn confusion(truth: Vec<usize>, predicted: Vec<usize>, n_classes: usize) -> PyResult<Vec<Vec<u64>>> {
    Ok(confusion_matrix(&truth, &predicted, n_classes).map_err(value_err)?.counts)
}

/// Per-class and macro precision, recall and F-score.
#[pyfunction]
fn metrics<'py>(py: Python<'py>, truth: Vec<usize>, predicted: Vec<usize>, n_classes: usize) -> PyResult<Bound<'py, PyDict>> {
    let cm = confusion_matrix(&truth, &predicted, n_classes).map_err(value_err)?;
    let m = metric_report(&cm).map_err(value_err)?;
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f", m.f)?;
    d.set_item("macro_precision", m.macro_precision)?;
    d.set_item("macro_recall", m.macro_recall)?;
    d.set_item("macro_f", m.macro_f)?;
    d.set_item("undefined", m.undefined)?;
    Ok(d)
}

/// Check an experiment config and its data; returns the summary text.
#[pyfunction]
fn validate(config_path: PathBuf) -> PyResult<String> {
    cmd_validate(&config_path).map_err(|e| PyValueError::new_err(e.message))
}

/// Run an experiment config, writing outputs to `out_dir`; returns the
/// markdown report. Config problems raise ValueError, failed runs
/// RuntimeError (outputs are still written).
#[pyfunction]
#[pyo3(signature = (config_path, out_dir=None, seed=None, repetitions=None))]
fn run_experiment(
    py: Python<'_>,
    config_path: PathBuf,
    out_dir: Option<PathBuf>,
    seed: Option<u64>,
    repetitions: Option<usize>,
) -> PyResult<String> {
    let overrides = RunOverrides {
        out: out_dir,
        seed,
        repetitions,
    };
    let result = py.detach(|| cmd_run(Path::new(&config_path), &overrides));
    match result {
        Ok(out) => Ok(out.markdown),
        Err(e) if e.code == rcl_core::cli::EXIT_CONFIG => Err(PyValueError::new_err(e.message)),
        Err(e) => Err(PyRuntimeError::new_err(e.message)),
    }
}

#[pymodule]
fn rcl(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(window_series, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(validate, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_class::<Standardizer>()?;
    m.add_class::<Generator>()?;
    m.add_class::<Model>()?;
    Ok(())
}
