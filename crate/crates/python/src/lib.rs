//! Python bindings: benchmark generation, training, detection and metrics.
//!
//! Structured values (configs, summaries, labels, detections) cross the
//! boundary as plain dicts and lists through their JSON form.

use std::path::PathBuf;

use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyModule;
use serde::de::DeserializeOwned;
use serde::Serialize;

use uadan::datagen::{load_dataset, save_dataset, Benchmark as CoreBenchmark, BenchmarkConfig, Dataset, SPLITS};
use uadan::evaluation::{average_precision as core_ap, evaluate, ScoredBox, COLLECT_SCORE_THRESHOLD, EVAL_IOU};
use uadan::geometry::BBox;
use uadan::training::{train as core_train, RunOptions, TrainData};
use uadan::{AblationMode, Checkpoint, Error, TrainConfig};

fn err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::Shape(_) | Error::DegenerateBox(_) | Error::InvalidDistribution(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyModule::import(py, "json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = PyModule::import(py, "json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn config_or_default<T: DeserializeOwned + Default>(py: Python<'_>, obj: Option<&Bound<'_, PyAny>>) -> PyResult<T> {
    obj.map(|o| from_py(py, o)).transpose().map(Option::unwrap_or_default)
}

/// The source, target_train and target_eval splits.
#[pyclass]
struct Benchmark {
    data: TrainData,
}

impl Benchmark {
    fn split(&self, name: &str) -> PyResult<&Dataset> {
        match name {
            "source" => Ok(&self.data.source),
            "target_train" => Ok(&self.data.target_train),
            "target_eval" => Ok(&self.data.target_eval),
            _ => Err(PyValueError::new_err(format!("unknown split {name:?}; expected one of {SPLITS:?}"))),
        }
    }
}

#[pymethods]
impl Benchmark {
    /// Renders all three splits from a benchmark config dict.
    #[staticmethod]
    #[pyo3(signature = (config=None))]
    fn generate(py: Python<'_>, config: Option<&Bound<'_, PyAny>>) -> PyResult<Self> {
        let cfg: BenchmarkConfig = config_or_default(py, config)?;
        let b = py.allow_threads(|| CoreBenchmark::generate(&cfg)).map_err(err)?;
        Ok(Self {
            data: TrainData {
                source: b.source,
                target_train: b.target_train,
                target_eval: b.target_eval,
            },
        })
    }

    #[staticmethod]
    fn load(root: PathBuf) -> PyResult<Self> {
        let get = |s: &str| load_dataset(&root.join(s)).map_err(err);
        Ok(Self {
            data: TrainData {
                source: get("source")?,
                target_train: get("target_train")?,
                target_eval: get("target_eval")?,
            },
        })
    }

    fn save(&self, root: PathBuf) -> PyResult<()> {
        for name in SPLITS {
            save_dataset(self.split(name)?, &root.join(name)).map_err(err)?;
        }
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.data.source.len() + self.data.target_train.len() + self.data.target_eval.len()
    }

    fn split_len(&self, split: &str) -> PyResult<usize> {
        Ok(self.split(split)?.len())
    }

    /// `(height, width, pixels)` with pixels in row-major HWC order in [0, 1].
    fn image(&self, split: &str, index: usize) -> PyResult<(usize, usize, Vec<f64>)> {
        let ds = self.split(split)?;
        let s = ds.samples.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
        Ok((s.image.height, s.image.width, s.image.data.clone()))
    }

    /// Labels of a source sample; `None` on target splits.
    fn labels(&self, py: Python<'_>, split: &str, index: usize) -> PyResult<PyObject> {
        let ds = self.split(split)?;
        let s = ds.samples.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
        to_py(py, &s.labels)
    }

    /// How often target ground truth of `split` has been read.
    fn label_reads(&self, split: &str) -> PyResult<usize> {
        Ok(self.split(split)?.label_reads())
    }
}

/// Detector plus both domain classifiers.
#[pyclass]
struct Model {
    inner: uadan::Model,
    config: TrainConfig,
}

#[pymethods]
impl Model {
    /// Freshly initialised model for a training config dict.
    #[new]
    #[pyo3(signature = (config=None, seed=0))]
    fn new(py: Python<'_>, config: Option<&Bound<'_, PyAny>>, seed: u64) -> PyResult<Self> {
        let config: TrainConfig = config_or_default(py, config)?;
        let inner = uadan::Model::new(&config.detector, seed).map_err(err)?;
        Ok(Self { inner, config })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let ck = Checkpoint::load(&path).map_err(err)?;
        Ok(Self {
            inner: ck.model,
            config: ck.config,
        })
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<PyObject> {
        to_py(py, &self.config)
    }

    fn tensor_count(&self) -> usize {
        self.inner.store.len()
    }

    /// Detections on one image of a benchmark split.
    #[pyo3(signature = (benchmark, split, index, score_threshold=COLLECT_SCORE_THRESHOLD))]
    fn detect(&self, py: Python<'_>, benchmark: &Benchmark, split: &str, index: usize, score_threshold: f64) -> PyResult<PyObject> {
        let ds = benchmark.split(split)?;
        let s = ds.samples.get(index).ok_or_else(|| PyIndexError::new_err(index))?;
        let dets = self
            .inner
            .detect(&s.image, score_threshold, uadan::detector::DETECTION_NMS_IOU)
            .map_err(err)?;
        to_py(py, &dets)
    }

    /// Per-class AP and mAP on the held-out target split.
    fn evaluate(&self, py: Python<'_>, benchmark: &Benchmark) -> PyResult<PyObject> {
        let ds = &benchmark.data.target_eval;
        let images: Vec<_> = ds.samples.iter().map(|s| &s.image).collect();
        let (res, _) = evaluate(&self.inner, &images, ds.eval_labels()).map_err(err)?;
        to_py(py, &res)
    }
}

/// Trains on a benchmark; returns `(model, summary, history)`.
#[pyfunction]
#[pyo3(signature = (benchmark, config=None, out_dir=None, periodic_eval=true))]
fn train(
    py: Python<'_>,
    benchmark: &Benchmark,
    config: Option<&Bound<'_, PyAny>>,
    out_dir: Option<PathBuf>,
    periodic_eval: bool,
) -> PyResult<(Model, PyObject, PyObject)> {
    let cfg: TrainConfig = config_or_default(py, config)?;
    let opts = RunOptions {
        out_dir,
        resume: false,
        periodic_eval,
        ..Default::default()
    };
    let out = py.allow_threads(|| core_train(&cfg, &benchmark.data, &opts)).map_err(err)?;
    let summary = to_py(py, &out.summary)?;
    let history = to_py(py, &out.history.records)?;
    Ok((
        Model {
            inner: out.checkpoint.model,
            config: cfg,
        },
        summary,
        history,
    ))
}

#[pyfunction]
fn default_train_config(py: Python<'_>) -> PyResult<PyObject> {
    to_py(py, &TrainConfig::default())
}

#[pyfunction]
fn default_benchmark_config(py: Python<'_>) -> PyResult<PyObject> {
    to_py(py, &BenchmarkConfig::default())
}

#[pyfunction]
fn modes() -> Vec<String> {
    AblationMode::ALL.iter().map(|m| m.name().to_string()).collect()
}

#[pyfunction]
fn binary_entropy(p: f64) -> f64 {
    uadan::uncertainty::binary_entropy(p)
}

#[pyfunction]
fn categorical_entropy(dist: Vec<f64>) -> PyResult<f64> {
    uadan::uncertainty::categorical_entropy(&dist).map_err(err)
}

fn bbox(b: [f64; 4]) -> BBox {
    BBox::new(b[0], b[1], b[2], b[3])
}

#[pyfunction]
fn iou(a: [f64; 4], b: [f64; 4]) -> PyResult<f64> {
    uadan::geometry::iou(&bbox(a), &bbox(b)).map_err(err)
}

/// AP at IoU 0.5 of one class. `detections` holds `(image, score, box)`
/// triples and `ground_truth` one box list per image.
#[pyfunction]
fn average_precision(detections: Vec<(usize, f64, [f64; 4])>, ground_truth: Vec<Vec<[f64; 4]>>) -> PyResult<Option<f64>> {
    if let Some(d) = detections.iter().find(|d| d.0 >= ground_truth.len()) {
        return Err(PyIndexError::new_err(format!("detection on image {} of {}", d.0, ground_truth.len())));
    }
    let dets: Vec<ScoredBox> = detections
        .into_iter()
        .map(|(image, score, b)| ScoredBox {
            image,
            score,
            bbox: bbox(b),
        })
        .collect();
    let gt: Vec<Vec<BBox>> = ground_truth.into_iter().map(|g| g.into_iter().map(bbox).collect()).collect();
    Ok(core_ap(&dets, &gt, EVAL_IOU))
}

#[pymodule]
fn uadan_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Benchmark>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(default_train_config, m)?)?;
    m.add_function(wrap_pyfunction!(default_benchmark_config, m)?)?;
    m.add_function(wrap_pyfunction!(modes, m)?)?;
    m.add_function(wrap_pyfunction!(binary_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(categorical_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(average_precision, m)?)?;
    Ok(())
}
