//! The training loop shared by every variant: seeded shuffling and
//! augmentation, per-epoch metrics, best-only checkpointing and early stopping.

pub mod early_stop;
pub mod metrics;
pub mod optim;

use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{Device, Tensor, D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{checkpoint_file_name, save_checkpoint_with_config};
use crate::dataset::{ClassLabel, DatasetManifest};
use crate::error::{Error, Result};
use crate::models::layers::Mode;
use crate::models::{images_to_batch, ModelHandle, OptimizerFamily};
use crate::preprocess::{prepare_eval, random_augment, to_model_input, AugmentationConfig, ImageTensor};

pub use early_stop::{early_stop_update, EarlyStopOutcome, EarlyStopState};
pub use metrics::{compute_accuracy, compute_average_loss};
use optim::Optimizer;

/// Hyperparameters held constant across every variant of a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs_max: usize,
    pub patience: usize,
    pub min_delta: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    /// `None` uses the optimizer family designated by the variant.
    pub optimizer_family: Option<OptimizerFamily>,
    pub seed: u64,
    /// Whether training batches are augmented.
    pub augment: bool,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs_max: 20,
            patience: 3,
            min_delta: 0.0,
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 32,
            optimizer_family: None,
            seed: 0,
            augment: true,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs_max == 0 || self.patience == 0 || self.batch_size == 0 {
            return Err(Error::Validation(
                "epochs_max, patience and batch_size must all be >= 1".into(),
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.min_delta < 0.0 {
            return Err(Error::Validation(
                "momentum must be in [0, 1) and min_delta >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Anything that can hand out labelled 8-bit images by index.
pub trait SampleSource {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> ClassLabel;
    fn image(&self, index: usize) -> Result<ImageTensor>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl SampleSource for DatasetManifest {
    fn len(&self) -> usize {
        self.entries().len()
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.entries()[index].label
    }

    fn image(&self, index: usize) -> Result<ImageTensor> {
        ImageTensor::open(&self.entries()[index].path)
    }
}

/// Decoded images held in memory.
#[derive(Debug, Clone, Default)]
pub struct InMemorySamples {
    pub items: Vec<(ImageTensor, ClassLabel)>,
}

impl SampleSource for InMemorySamples {
    fn len(&self) -> usize {
        self.items.len()
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.items[index].1
    }

    fn image(&self, index: usize) -> Result<ImageTensor> {
        Ok(self.items[index].0.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub checkpoint_path: PathBuf,
    pub wall_clock_seconds: f64,
}

impl TrainingHistory {
    pub fn best(&self) -> &EpochMetrics {
        &self.epochs[self.best_epoch - 1]
    }

    pub fn last(&self) -> &EpochMetrics {
        self.epochs.last().expect("at least one epoch")
    }

    /// Writes `epoch,train_loss,train_acc,val_loss,val_acc` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
        for m in &self.epochs {
            w.write_record([
                m.epoch.to_string(),
                m.train_loss.to_string(),
                m.train_acc.to_string(),
                m.val_loss.to_string(),
                m.val_acc.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
        let mut r = csv::Reader::from_path(path)?;
        r.deserialize().map(|row| Ok(row?)).collect()
    }
}

/// Where the best checkpoint goes and what it is tagged with.
#[derive(Debug, Clone)]
pub struct TrainOptions {
    /// Training-time augmentation; also used when `TrainingConfig::augment`
    /// is false, for its seed only.
    pub augmentation: AugmentationConfig,
    pub checkpoint_dir: PathBuf,
    pub run_id: String,
    pub config_echo: Option<serde_json::Value>,
}

/// Mean categorical cross-entropy of `logits` against class ids.
pub fn cross_entropy_loss(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let targets: Vec<u32> = labels.iter().map(|&l| l as u32).collect();
    let targets = Tensor::from_vec(targets, labels.len(), logits.device())?;
    Ok(candle_nn::loss::cross_entropy(logits, &targets)?)
}

fn argmax_rows(logits: &Tensor) -> Result<Vec<usize>> {
    Ok(logits
        .argmax(D::Minus1)?
        .to_vec1::<u32>()?
        .into_iter()
        .map(|v| v as usize)
        .collect())
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub loss: f64,
    pub predictions: Vec<usize>,
}

/// One model's optimizer state plus the RNG driving its dropout masks.
pub struct Trainer<'a> {
    handle: &'a ModelHandle,
    optimizer: Optimizer,
    dropout_rng: ChaCha8Rng,
}

impl<'a> Trainer<'a> {
    pub fn new(handle: &'a ModelHandle, cfg: &TrainingConfig) -> Result<Self> {
        let family = cfg
            .optimizer_family
            .unwrap_or_else(|| handle.optimizer_family());
        let vars = handle.trainable_vars().into_iter().map(|(_, v)| v).collect();
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        dropout_rng.set_stream(u64::MAX);
        Ok(Trainer {
            handle,
            optimizer: Optimizer::new(family, vars, cfg.learning_rate, cfg.momentum)?,
            dropout_rng,
        })
    }

    /// Forward, cross-entropy, backward and one optimizer update.
    pub fn step(&mut self, batch: &Tensor, labels: &[usize]) -> Result<StepOutput> {
        let logits = self
            .handle
            .forward(batch, &mut Mode::Train(&mut self.dropout_rng))?;
        let loss = cross_entropy_loss(&logits, labels)?;
        let value = loss.to_scalar::<f32>()? as f64;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("training loss is {value}")));
        }
        self.optimizer.backward_step(&loss)?;
        Ok(StepOutput {
            loss: value,
            predictions: argmax_rows(&logits)?,
        })
    }
}

fn sample_rng(seed: u64, epoch: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((epoch as u64) << 32) | index as u64);
    rng
}

fn load_batch(
    source: &dyn SampleSource,
    indices: &[usize],
    size: (u32, u32),
    augment: Option<(&AugmentationConfig, usize)>,
) -> Result<(Tensor, Vec<usize>)> {
    let mut images = Vec::with_capacity(indices.len());
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        let img = source.image(i)?;
        let ready = match augment {
            Some((cfg, epoch)) => {
                let mut rng = sample_rng(cfg.seed, epoch, i);
                to_model_input(&random_augment(&img, cfg, &mut rng)?)?
            }
            None => prepare_eval(&img, size)?,
        };
        images.push(ready);
        labels.push(source.label(i).id());
    }
    Ok((images_to_batch(&images)?, labels))
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub predictions: Vec<usize>,
    pub truths: Vec<usize>,
}

/// Loss and accuracy in inference mode with eval-time preprocessing.
pub fn evaluate(handle: &ModelHandle, source: &dyn SampleSource, batch_size: usize) -> Result<Evaluation> {
    let size = handle.spec().input_size;
    let indices: Vec<usize> = (0..source.len()).collect();
    let mut losses = Vec::new();
    let mut predictions = Vec::new();
    let mut truths = Vec::new();
    for chunk in indices.chunks(batch_size.max(1)) {
        let (batch, labels) = load_batch(source, chunk, size, None)?;
        let logits = handle.forward(&batch, &mut Mode::Eval)?;
        let loss = cross_entropy_loss(&logits, &labels)?.to_scalar::<f32>()? as f64;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("validation loss is {loss}")));
        }
        losses.push((loss, labels.len()));
        predictions.extend(argmax_rows(&logits)?);
        truths.extend(labels);
    }
    Ok(Evaluation {
        loss: compute_average_loss(&losses)?,
        accuracy: compute_accuracy(&predictions, &truths)?,
        predictions,
        truths,
    })
}

/// Trains `handle` in place, saving a checkpoint whenever validation loss
/// improves and stopping once it has not improved for `patience` epochs.
pub fn train(
    handle: &ModelHandle,
    train_data: &dyn SampleSource,
    val_data: &dyn SampleSource,
    cfg: &TrainingConfig,
    opts: &TrainOptions,
) -> Result<TrainingHistory> {
    cfg.validate()?;
    if train_data.is_empty() || val_data.is_empty() {
        return Err(Error::Validation(
            "training and validation data must be non-empty".into(),
        ));
    }
    let size = handle.spec().input_size;
    let augmentation = if cfg.augment {
        opts.augmentation.validate()?;
        if opts.augmentation.image_size != size {
            return Err(Error::Argument(format!(
                "augmentation image_size {:?} differs from model input {:?}",
                opts.augmentation.image_size, size
            )));
        }
        Some(&opts.augmentation)
    } else {
        None
    };
    std::fs::create_dir_all(&opts.checkpoint_dir)
        .map_err(|e| Error::Resource(format!("{}: {e}", opts.checkpoint_dir.display())))?;
    let checkpoint_path = opts
        .checkpoint_dir
        .join(checkpoint_file_name(handle.variant(), &opts.run_id));

    let started = Instant::now();
    let mut trainer = Trainer::new(handle, cfg)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(u64::MAX - 1);
    let mut stopper = EarlyStopState::new(cfg.patience, cfg.min_delta);
    let mut epochs = Vec::new();
    let mut best_epoch = 0;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs_max {
        let mut order: Vec<usize> = (0..train_data.len()).collect();
        order.shuffle(&mut shuffle_rng);
        let mut losses = Vec::new();
        let mut predictions = Vec::new();
        let mut truths = Vec::new();
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let (batch, labels) =
                load_batch(train_data, chunk, size, augmentation.map(|a| (a, epoch)))?;
            let out = trainer.step(&batch, &labels).map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}, batch {b}: {m}")),
                other => other,
            })?;
            losses.push((out.loss, labels.len()));
            predictions.extend(out.predictions);
            truths.extend(labels);
        }
        let val = evaluate(handle, val_data, cfg.batch_size).map_err(|e| match e {
            Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
            other => other,
        })?;
        let metrics = EpochMetrics {
            epoch,
            train_loss: compute_average_loss(&losses)?,
            train_acc: compute_accuracy(&predictions, &truths)?,
            val_loss: val.loss,
            val_acc: val.accuracy,
        };
        log::info!(
            "{} epoch {epoch}: train_loss={:.4} train_acc={:.4} val_loss={:.4} val_acc={:.4}",
            handle.variant(),
            metrics.train_loss,
            metrics.train_acc,
            metrics.val_loss,
            metrics.val_acc
        );
        epochs.push(metrics);
        let outcome = early_stop_update(&mut stopper, val.loss)?;
        if outcome.improved {
            best_epoch = epoch;
            save_checkpoint_with_config(handle, &checkpoint_path, opts.config_echo.as_ref())?;
        }
        if outcome.stop {
            stopped_early = epoch < cfg.epochs_max;
            break;
        }
    }

    Ok(TrainingHistory {
        epochs,
        best_epoch,
        stopped_early,
        checkpoint_path,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}

/// A `B×H×W×3` tensor of uniform noise in `[0, 1)`, seeded.
pub fn random_batch(batch: usize, size: (u32, u32), seed: u64) -> Result<Tensor> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = batch * size.0 as usize * size.1 as usize * 3;
    let data: Vec<f32> = (0..n).map(|_| rng.gen()).collect();
    Ok(Tensor::from_vec(
        data,
        (batch, size.0 as usize, size.1 as usize, 3),
        &Device::Cpu,
    )?)
}
