//! Python bindings: `import distractnet_py`.
//!
//! Images cross the boundary as raw interleaved RGB `bytes` plus height and
//! width, so no array library is required on the Python side.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use distractnet::benchmark::{compare_results as rs_compare, BenchmarkResult};
use distractnet::checkpoint;
use distractnet::dataset::{self, DatasetManifest, SplitSpec, NUM_CLASSES};
use distractnet::models::{self as zoo, ModelHandle, ModelSpec, Variant};
use distractnet::preprocess::{self, ImageTensor};
use distractnet::train::{self, early_stop};
use distractnet::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Resource(_) => PyOSError::new_err(e.to_string()),
        Error::Numeric(_) => PyArithmeticError::new_err(e.to_string()),
        Error::Tensor(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for distractnet::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn image_from_bytes(pixels: &[u8], height: u32, width: u32) -> PyResult<ImageTensor> {
    let img = image::RgbImage::from_raw(width, height, pixels.to_vec()).ok_or_else(|| {
        PyValueError::new_err(format!(
            "expected {} bytes for a {height}x{width} RGB image, got {}",
            height as usize * width as usize * 3,
            pixels.len()
        ))
    })?;
    Ok(ImageTensor::from_rgb(&img))
}

fn image_bytes<'py>(py: Python<'py>, img: &ImageTensor) -> Bound<'py, PyBytes> {
    match img.bytes() {
        Some(b) => PyBytes::new(py, b),
        None => PyBytes::new(py, img.to_rgb().as_raw()),
    }
}

fn parse_variant(id: &str) -> PyResult<Variant> {
    id.parse::<Variant>().py()
}

/// A scanned or split dataset.
#[pyclass(name = "Manifest")]
pub struct PyManifest {
    inner: DatasetManifest,
}

#[pymethods]
impl PyManifest {
    #[staticmethod]
    fn scan(root: PathBuf) -> PyResult<Self> {
        Ok(PyManifest {
            inner: dataset::scan_dataset(&root).py()?,
        })
    }

    #[staticmethod]
    fn read_csv(root: PathBuf, path: PathBuf) -> PyResult<Self> {
        Ok(PyManifest {
            inner: DatasetManifest::read_csv(root, &path).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn counts(&self) -> Vec<usize> {
        self.inner.counts().to_vec()
    }

    fn is_balanced(&self) -> bool {
        self.inner.is_balanced()
    }

    fn warnings(&self) -> Vec<String> {
        self.inner.warnings().to_vec()
    }

    /// `[(path, label_id), ...]`
    fn entries(&self) -> Vec<(PathBuf, usize)> {
        self.inner
            .entries()
            .iter()
            .map(|e| (e.path.clone(), e.label.id()))
            .collect()
    }

    #[pyo3(signature = (train_fraction = 0.8, seed = 0, stratified = true))]
    fn split(&self, train_fraction: f64, seed: u64, stratified: bool) -> PyResult<(PyManifest, PyManifest)> {
        let spec = SplitSpec {
            train_fraction,
            seed,
            stratified,
        };
        let (a, b) = dataset::stratified_split(&self.inner, &spec).py()?;
        Ok((PyManifest { inner: a }, PyManifest { inner: b }))
    }

    #[pyo3(signature = (per_class = 10, seed = 0))]
    fn test_subset(&self, per_class: usize, seed: u64) -> PyResult<PyManifest> {
        Ok(PyManifest {
            inner: dataset::select_test_subset(&self.inner, per_class, seed).py()?,
        })
    }

    /// `{"R": [256 counts], "G": [...], "B": [...]}`
    #[pyo3(signature = (sample_limit = None))]
    fn histograms(&self, sample_limit: Option<usize>) -> PyResult<Vec<(String, Vec<u64>)>> {
        Ok(dataset::compute_channel_histograms(&self.inner, sample_limit)
            .py()?
            .into_iter()
            .map(|h| (h.channel.to_string(), h.bins.to_vec()))
            .collect())
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        self.inner.write_csv(&path).py()
    }
}

#[pyclass(name = "AugmentationConfig", skip_from_py_object)]
#[derive(Clone)]
pub struct PyAugmentationConfig {
    #[pyo3(get, set)]
    brightness_range: (f64, f64),
    #[pyo3(get, set)]
    contrast_range: (f64, f64),
    #[pyo3(get, set)]
    rotation_max_deg: f64,
    #[pyo3(get, set)]
    hflip_prob: f64,
    #[pyo3(get, set)]
    translate_frac: f64,
    #[pyo3(get, set)]
    shear_max_deg: f64,
    #[pyo3(get, set)]
    scale_range: (f64, f64),
    #[pyo3(get, set)]
    seed: u64,
    #[pyo3(get, set)]
    image_size: (u32, u32),
}

impl From<preprocess::AugmentationConfig> for PyAugmentationConfig {
    fn from(c: preprocess::AugmentationConfig) -> Self {
        PyAugmentationConfig {
            brightness_range: c.brightness_range,
            contrast_range: c.contrast_range,
            rotation_max_deg: c.rotation_max_deg,
            hflip_prob: c.hflip_prob,
            translate_frac: c.translate_frac,
            shear_max_deg: c.shear_max_deg,
            scale_range: c.scale_range,
            seed: c.seed,
            image_size: c.image_size,
        }
    }
}

impl PyAugmentationConfig {
    fn to_rust(&self) -> preprocess::AugmentationConfig {
        preprocess::AugmentationConfig {
            brightness_range: self.brightness_range,
            contrast_range: self.contrast_range,
            rotation_max_deg: self.rotation_max_deg,
            hflip_prob: self.hflip_prob,
            translate_frac: self.translate_frac,
            shear_max_deg: self.shear_max_deg,
            scale_range: self.scale_range,
            seed: self.seed,
            image_size: self.image_size,
        }
    }
}

#[pymethods]
impl PyAugmentationConfig {
    #[new]
    fn new() -> Self {
        preprocess::AugmentationConfig::default().into()
    }

    #[staticmethod]
    fn identity(image_size: (u32, u32)) -> Self {
        preprocess::AugmentationConfig::identity(image_size).into()
    }

    fn validate(&self) -> PyResult<()> {
        self.to_rust().validate().py()
    }
}

#[pyfunction]
fn enhance_brightness<'py>(
    py: Python<'py>,
    pixels: &[u8],
    height: u32,
    width: u32,
    factor: f64,
) -> PyResult<Bound<'py, PyBytes>> {
    let out = preprocess::enhance_brightness(&image_from_bytes(pixels, height, width)?, factor).py()?;
    Ok(image_bytes(py, &out))
}

#[pyfunction]
fn change_contrast<'py>(
    py: Python<'py>,
    pixels: &[u8],
    height: u32,
    width: u32,
    factor: f64,
) -> PyResult<Bound<'py, PyBytes>> {
    let out = preprocess::change_contrast(&image_from_bytes(pixels, height, width)?, factor).py()?;
    Ok(image_bytes(py, &out))
}

/// Seeded augmentation; returns the `config.image_size` RGB bytes.
#[pyfunction]
fn random_augment<'py>(
    py: Python<'py>,
    pixels: &[u8],
    height: u32,
    width: u32,
    config: &PyAugmentationConfig,
    seed: u64,
) -> PyResult<Bound<'py, PyBytes>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let img = image_from_bytes(pixels, height, width)?;
    let out = preprocess::random_augment(&img, &config.to_rust(), &mut rng).py()?;
    Ok(image_bytes(py, &out))
}

/// Resize plus scaling to `[0, 1]`, flattened `H*W*3`.
#[pyfunction]
fn prepare_eval(pixels: &[u8], height: u32, width: u32, size: (u32, u32)) -> PyResult<Vec<f32>> {
    let out = preprocess::prepare_eval(&image_from_bytes(pixels, height, width)?, size).py()?;
    Ok(out.real().map(<[f32]>::to_vec).unwrap_or_default())
}

#[pyclass(name = "Model")]
pub struct PyModel {
    inner: ModelHandle,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (variant, input_size = (224, 224), seed = 0, pretrained = false, weights_dir = None))]
    fn new(
        variant: &str,
        input_size: (u32, u32),
        seed: u64,
        pretrained: bool,
        weights_dir: Option<PathBuf>,
    ) -> PyResult<Self> {
        let mut spec = ModelSpec::new(parse_variant(variant)?)
            .with_input_size(input_size.0, input_size.1)
            .with_seed(seed);
        spec.pretrained_backbone = pretrained;
        spec.weights_dir = weights_dir;
        Ok(PyModel {
            inner: zoo::build_model(&spec).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: checkpoint::load_checkpoint(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        checkpoint::save_checkpoint(&self.inner, &path).py()
    }

    #[getter]
    fn variant(&self) -> &'static str {
        self.inner.variant().id()
    }

    #[getter]
    fn input_size(&self) -> (u32, u32) {
        self.inner.spec().input_size
    }

    #[getter]
    fn optimizer_family(&self) -> String {
        format!("{:?}", self.inner.optimizer_family()).to_lowercase()
    }

    /// `(trainable, frozen)`
    fn count_parameters(&self) -> (usize, usize) {
        let c = self.inner.count_parameters();
        (c.trainable, c.frozen)
    }

    fn parameter_names(&self) -> Vec<String> {
        self.inner.parameter_names()
    }

    fn frozen_parameter_names(&self) -> Vec<String> {
        self.inner
            .freeze_policy()
            .frozen_parameter_names()
            .iter()
            .cloned()
            .collect()
    }

    /// Softmax probabilities for images given as RGB bytes of any size; each
    /// is resized to the model input first.
    fn predict(&self, images: Vec<(Vec<u8>, u32, u32)>) -> PyResult<Vec<Vec<f32>>> {
        let size = self.inner.spec().input_size;
        let prepared = images
            .iter()
            .map(|(px, h, w)| {
                let img = image_from_bytes(px, *h, *w)?;
                preprocess::prepare_eval(&img, size).py()
            })
            .collect::<PyResult<Vec<_>>>()?;
        self.inner.predict_images(&prepared).py()
    }

    /// Trains on two manifests; returns one dict-like tuple per epoch,
    /// `(epoch, train_loss, train_acc, val_loss, val_acc)`.
    #[pyo3(signature = (train_set, val_set, checkpoint_dir, epochs_max = 20, patience = 3, batch_size = 32, learning_rate = 1e-3, seed = 0, augment = true, run_id = "py".to_string()))]
    #[allow(clippy::too_many_arguments)]
    fn fit(
        &self,
        train_set: &PyManifest,
        val_set: &PyManifest,
        checkpoint_dir: PathBuf,
        epochs_max: usize,
        patience: usize,
        batch_size: usize,
        learning_rate: f64,
        seed: u64,
        augment: bool,
        run_id: String,
    ) -> PyResult<Vec<(usize, f64, f64, f64, f64)>> {
        let cfg = train::TrainingConfig {
            epochs_max,
            patience,
            batch_size,
            learning_rate,
            seed,
            augment,
            ..Default::default()
        };
        let mut aug = preprocess::AugmentationConfig::default();
        aug.image_size = self.inner.spec().input_size;
        aug.seed = seed;
        let opts = train::TrainOptions {
            augmentation: aug,
            checkpoint_dir,
            run_id,
            config_echo: None,
        };
        let h = train::train(&self.inner, &train_set.inner, &val_set.inner, &cfg, &opts).py()?;
        Ok(h.epochs
            .iter()
            .map(|m| (m.epoch, m.train_loss, m.train_acc, m.val_loss, m.val_acc))
            .collect())
    }
}

#[pyclass(name = "EarlyStopper")]
pub struct PyEarlyStopper {
    inner: early_stop::EarlyStopState,
}

#[pymethods]
impl PyEarlyStopper {
    #[new]
    #[pyo3(signature = (patience = 3, min_delta = 0.0))]
    fn new(patience: usize, min_delta: f64) -> Self {
        PyEarlyStopper {
            inner: early_stop::EarlyStopState::new(patience, min_delta),
        }
    }

    /// `(improved, stop)`
    fn update(&mut self, val_loss: f64) -> PyResult<(bool, bool)> {
        let o = early_stop::early_stop_update(&mut self.inner, val_loss).py()?;
        Ok((o.improved, o.stop))
    }

    #[getter]
    fn best_val_loss(&self) -> f64 {
        self.inner.best_val_loss
    }

    #[getter]
    fn epochs_since_improvement(&self) -> usize {
        self.inner.epochs_since_improvement
    }
}

#[pyfunction]
#[pyo3(signature = (losses, patience = 3, min_delta = 0.0))]
fn stop_epoch(losses: Vec<f64>, patience: usize, min_delta: f64) -> PyResult<Option<usize>> {
    early_stop::stop_epoch(&losses, patience, min_delta).py()
}

#[pyfunction]
fn compute_average_loss(batch_losses: Vec<(f64, usize)>) -> PyResult<f64> {
    train::compute_average_loss(&batch_losses).py()
}

#[pyfunction]
fn compute_accuracy(predictions: Vec<usize>, truths: Vec<usize>) -> PyResult<f64> {
    train::compute_accuracy(&predictions, &truths).py()
}

/// Ranks `(variant, accuracy, elapsed_seconds)` rows; returns
/// `(rank, variant, accuracy, elapsed_seconds, pareto)`.
#[pyfunction]
fn compare_results(rows: Vec<(String, f64, f64)>) -> Vec<(usize, String, f64, f64, bool)> {
    let results: Vec<BenchmarkResult> = rows
        .into_iter()
        .map(|(variant, accuracy, elapsed_seconds)| BenchmarkResult {
            variant,
            accuracy,
            elapsed_seconds,
            per_class_correct: [0; NUM_CLASSES],
            images_evaluated: 0,
            batch_size: 1,
            failed: None,
            timings: Vec::new(),
        })
        .collect();
    rs_compare(&results)
        .into_iter()
        .map(|r| (r.rank, r.result.variant, r.result.accuracy, r.result.elapsed_seconds, r.pareto))
        .collect()
}

#[pyfunction]
fn variants() -> Vec<&'static str> {
    Variant::ALL.iter().map(|v| v.id()).collect()
}

#[pyfunction]
fn class_names() -> Vec<&'static str> {
    dataset::ClassLabel::all().map(|c| c.name()).collect()
}

#[pymodule]
fn distractnet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyManifest>()?;
    m.add_class::<PyAugmentationConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyEarlyStopper>()?;
    m.add_function(wrap_pyfunction!(enhance_brightness, m)?)?;
    m.add_function(wrap_pyfunction!(change_contrast, m)?)?;
    m.add_function(wrap_pyfunction!(random_augment, m)?)?;
    m.add_function(wrap_pyfunction!(prepare_eval, m)?)?;
    m.add_function(wrap_pyfunction!(stop_epoch, m)?)?;
    m.add_function(wrap_pyfunction!(compute_average_loss, m)?)?;
    m.add_function(wrap_pyfunction!(compute_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(compare_results, m)?)?;
    m.add_function(wrap_pyfunction!(variants, m)?)?;
    m.add_function(wrap_pyfunction!(class_names, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
