//! Python bindings: checkpoint inference, fingerprint compositing, GLCM analysis and training.

use std::path::PathBuf;

use candle_core::Device;
use gfd_core::analysis::{self, GlcmConfig};
use gfd_core::config::RunConfig;
use gfd_core::data::{composite as composite_fp, load_manifest, Fingerprint, ImageTensor};
use gfd_core::inference::{EvalMode, InferenceModel};
use gfd_core::toy::{write_toy_dataset, ToyConfig};
use gfd_core::training::fit;
use gfd_core::GfdError;
use numpy::{IntoPyArray, PyArray2, PyArray3, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyAny;

fn to_py(e: GfdError) -> PyErr {
    match e {
        GfdError::MissingFile(p) => PyFileNotFoundError::new_err(p.display().to_string()),
        GfdError::Tensor(_) | GfdError::Io(_) | GfdError::Checkpoint(_) => {
            PyRuntimeError::new_err(e.to_string())
        }
        other => PyValueError::new_err(other.to_string()),
    }
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn image_from(arr: PyReadonlyArray3<f32>) -> PyResult<ImageTensor> {
    ImageTensor::new(arr.as_array().to_owned()).map_err(to_py)
}

/// Reads an image file into a float32 `[3, H, W]` array in `[-1, 1]`.
#[pyfunction]
fn load_image<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let img = ImageTensor::load(&path).map_err(to_py)?;
    Ok(img.into_pixels().into_pyarray(py))
}

/// Saves a `[3, H, W]` array in `[-1, 1]` as an 8-bit PNG.
#[pyfunction]
fn save_png(path: PathBuf, image: PyReadonlyArray3<f32>) -> PyResult<()> {
    image_from(image)?.save_png(&path).map_err(to_py)
}

/// Plants a fingerprint on a real carrier of the same shape.
#[pyfunction]
fn composite<'py>(
    py: Python<'py>,
    fingerprint: PyReadonlyArray3<f32>,
    carrier: PyReadonlyArray3<f32>,
) -> PyResult<Bound<'py, PyArray3<f32>>> {
    let fp = Fingerprint::new(fingerprint.as_array().to_owned(), None);
    let out = composite_fp(&fp, &image_from(carrier)?, "python").map_err(to_py)?;
    Ok(out.image.into_pixels().into_pyarray(py))
}

/// Co-occurrence matrix of a single-channel image for one offset.
#[pyfunction]
#[pyo3(signature = (image, distance, angle, levels = 64, symmetric = true))]
fn glcm<'py>(
    py: Python<'py>,
    image: PyReadonlyArray2<f64>,
    distance: usize,
    angle: f64,
    levels: usize,
    symmetric: bool,
) -> PyResult<Bound<'py, PyArray2<f64>>> {
    let cfg = GlcmConfig {
        levels,
        symmetric,
        ..GlcmConfig::default()
    };
    cfg.validate().map_err(to_py)?;
    let p = analysis::glcm(image.as_array(), distance, angle, &cfg).map_err(to_py)?;
    Ok(p.into_pyarray(py))
}

/// Correlation statistic of a normalized co-occurrence matrix.
#[pyfunction]
fn glcm_correlation(p: PyReadonlyArray2<f64>) -> PyResult<f64> {
    analysis::glcm_correlation(p.as_array()).map_err(to_py)
}

fn glcm_config(
    distances: Option<Vec<usize>>,
    angles: Option<Vec<f64>>,
    levels: usize,
) -> PyResult<GlcmConfig> {
    let mut cfg = GlcmConfig {
        levels,
        ..GlcmConfig::default()
    };
    if let Some(d) = distances {
        cfg.distances = d;
    }
    if let Some(a) = angles {
        cfg.angles = a;
    }
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

/// Correlation over every (distance, angle) pair, distance-major.
#[pyfunction]
#[pyo3(signature = (fingerprint, distances = None, angles = None, levels = 64))]
fn correlation_vector(
    fingerprint: PyReadonlyArray3<f32>,
    distances: Option<Vec<usize>>,
    angles: Option<Vec<f64>>,
    levels: usize,
) -> PyResult<Vec<f64>> {
    let cfg = glcm_config(distances, angles, levels)?;
    let fp = Fingerprint::new(fingerprint.as_array().to_owned(), None);
    Ok(analysis::fingerprint_correlation_vector(&fp, &cfg)
        .map_err(to_py)?
        .values)
}

/// Mean, variance and standard deviation of correlation vectors over a population.
#[pyfunction]
#[pyo3(signature = (fingerprints, distances = None, angles = None, levels = 64))]
fn population_stats<'py>(
    py: Python<'py>,
    fingerprints: Vec<PyReadonlyArray3<f32>>,
    distances: Option<Vec<usize>>,
    angles: Option<Vec<f64>>,
    levels: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = glcm_config(distances, angles, levels)?;
    let fps: Vec<Fingerprint> = fingerprints
        .iter()
        .map(|a| Fingerprint::new(a.as_array().to_owned(), None))
        .collect();
    let stats = analysis::population_stats(&fps, &cfg).map_err(to_py)?;
    json_to_py(py, &stats)
}

/// A trained checkpoint loaded for attribution, detection and fingerprint extraction.
#[pyclass(module = "gfd", unsendable)]
struct Model {
    inner: InferenceModel,
}

#[pymethods]
impl Model {
    #[new]
    fn new(checkpoint: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: InferenceModel::load(&checkpoint, &Device::Cpu).map_err(to_py)?,
        })
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.labels().names()
    }

    /// Source attribution for one `[3, H, W]` image; returns label, name, confidence and logits.
    fn attribute<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<f32>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let p = self.inner.attribute(&image_from(image)?).map_err(to_py)?;
        let name = self
            .inner
            .labels()
            .get(p.label)
            .map_err(to_py)?
            .name
            .clone();
        let out = serde_json::json!({
            "label": p.label,
            "name": name,
            "confidence": p.confidence,
            "logits": p.logits,
        });
        json_to_py(py, &out)
    }

    /// Real/fake decision with a fakeness score in `[0, 1]`.
    fn detect<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<f32>,
    ) -> PyResult<Bound<'py, PyAny>> {
        let d = self.inner.detect(&image_from(image)?).map_err(to_py)?;
        json_to_py(py, &d)
    }

    /// Fingerprint residual of the model patch cut from `image`.
    fn extract_fingerprint<'py>(
        &self,
        py: Python<'py>,
        image: PyReadonlyArray3<f32>,
    ) -> PyResult<Bound<'py, PyArray3<f32>>> {
        let fp = self
            .inner
            .extract_fingerprint(&image_from(image)?)
            .map_err(to_py)?;
        Ok(fp.residual.into_pyarray(py))
    }

    /// Evaluates on the test split of a manifest; `mode` is "closed" or "open".
    #[pyo3(signature = (manifest, mode = "closed"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        manifest: PathBuf,
        mode: &str,
    ) -> PyResult<Bound<'py, PyAny>> {
        let mode: EvalMode = mode.parse().map_err(to_py)?;
        let manifest = load_manifest(&manifest).map_err(to_py)?;
        let report = py
            .allow_threads(|| self.inner.evaluate(&manifest, mode))
            .map_err(to_py)?;
        json_to_py(py, &report)
    }
}

/// Trains a model. `overrides` use the CLI `--set` syntax, e.g. `"train.max_iters=200"`.
#[pyfunction]
#[pyo3(signature = (manifest, out, config = None, overrides = Vec::new()))]
fn train<'py>(
    py: Python<'py>,
    manifest: PathBuf,
    out: PathBuf,
    config: Option<PathBuf>,
    overrides: Vec<String>,
) -> PyResult<Bound<'py, PyAny>> {
    let parsed = overrides
        .iter()
        .map(|s| gfd_core::config::parse_override(s))
        .collect::<Result<Vec<_>, _>>()
        .map_err(to_py)?;
    let cfg = RunConfig::resolve(config.as_deref(), &parsed).map_err(to_py)?;
    cfg.validate().map_err(to_py)?;
    let manifest = load_manifest(&manifest).map_err(to_py)?;
    let ckpt = cfg.checkpoint_config(&manifest);
    let summary = py
        .allow_threads(|| fit(&manifest, ckpt, &out, None, &Device::Cpu))
        .map_err(to_py)?;
    json_to_py(py, &summary)
}

/// Writes the synthetic planted-pattern dataset and returns the manifest path.
#[pyfunction]
#[pyo3(signature = (root, pool_size = 600, num_generators = 2, seed = 0))]
fn write_toy_data(
    root: PathBuf,
    pool_size: usize,
    num_generators: usize,
    seed: u64,
) -> PyResult<PathBuf> {
    let cfg = ToyConfig {
        pool_size,
        num_generators,
        seed,
        ..ToyConfig::default()
    };
    Ok(write_toy_dataset(&root, &cfg).map_err(to_py)?.manifest)
}

#[pymodule]
fn gfd(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_png, m)?)?;
    m.add_function(wrap_pyfunction!(composite, m)?)?;
    m.add_function(wrap_pyfunction!(glcm, m)?)?;
    m.add_function(wrap_pyfunction!(glcm_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_vector, m)?)?;
    m.add_function(wrap_pyfunction!(population_stats, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(write_toy_data, m)?)?;
    Ok(())
}
