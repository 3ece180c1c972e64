//! The declarative run configuration (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::SplitSpec;
use crate::error::{Error, Result};
use crate::models::{HybridConfig, ModelSpec, Variant};
use crate::preprocess::AugmentationConfig;
use crate::train::TrainingConfig;

pub const WEIGHTS_ENV: &str = "DISTRACTNET_WEIGHTS_DIR";

fn default_models() -> Vec<String> {
    Variant::ALL.iter().map(|v| v.id().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub train_fraction: f64,
    pub stratified: bool,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let d = SplitSpec::default();
        SplitConfig {
            train_fraction: d.train_fraction,
            stratified: d.stratified,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub per_class: usize,
    pub batch_size: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            per_class: 10,
            batch_size: 1,
        }
    }
}

/// Everything a command needs. The top-level `seed` drives the split,
/// parameter initialisation, shuffling, dropout and augmentation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub output_dir: PathBuf,
    pub weights_dir: Option<PathBuf>,
    pub seed: u64,
    pub pretrained_backbone: bool,
    #[serde(default = "default_models")]
    pub models: Vec<String>,
    /// Images used for the channel-histogram analysis; `None` means all.
    pub histogram_sample_limit: Option<usize>,
    pub split: SplitConfig,
    pub training: TrainingConfig,
    pub augmentation: AugmentationConfig,
    pub hybrid: HybridConfig,
    pub benchmark: BenchmarkConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset_root: PathBuf::from("data"),
            output_dir: PathBuf::from("runs"),
            weights_dir: None,
            seed: 0,
            pretrained_backbone: true,
            models: default_models(),
            histogram_sample_limit: None,
            split: SplitConfig::default(),
            training: TrainingConfig::default(),
            augmentation: AugmentationConfig::default(),
            hybrid: HybridConfig::default(),
            benchmark: BenchmarkConfig::default(),
        }
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub no_pretrained: bool,
    pub weights_dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(format!("config: {e}")))
    }

    /// Reads the file and resolves relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Resource(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        let absolute = std::path::absolute(path).map_err(|e| Error::io(path, e))?;
        let base = absolute.parent().unwrap_or(Path::new("/"));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        rebase(&mut cfg.dataset_root);
        rebase(&mut cfg.output_dir);
        if let Some(w) = cfg.weights_dir.as_mut() {
            rebase(w);
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Format(format!("config: {e}")))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if o.no_pretrained {
            self.pretrained_backbone = false;
        }
        if let Some(w) = &o.weights_dir {
            self.weights_dir = Some(w.clone());
        }
        self.training.seed = self.seed;
        self.augmentation.seed = self.seed;
    }

    pub fn variants(&self) -> Result<Vec<Variant>> {
        self.models.iter().map(|m| m.parse()).collect()
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.split.train_fraction,
            seed: self.seed,
            stratified: self.split.stratified,
        }
    }

    pub fn model_spec(&self, variant: Variant) -> ModelSpec {
        let mut spec = ModelSpec::new(variant).with_seed(self.seed);
        spec.input_size = self.augmentation.image_size;
        spec.pretrained_backbone = self.pretrained_backbone && variant != Variant::SimpleCnn;
        spec.weights_dir = self.weights_dir.clone();
        spec.hybrid = self.hybrid.clone();
        spec
    }

    /// Collects every schema problem at once. `needs_dataset` also requires
    /// `dataset_root` to exist.
    pub fn validate(&self, needs_dataset: bool) -> Result<()> {
        let mut problems = Vec::new();
        if needs_dataset && !self.dataset_root.is_dir() {
            problems.push(format!(
                "dataset_root {} is not a directory",
                self.dataset_root.display()
            ));
        }
        if self.output_dir.exists() && !self.output_dir.is_dir() {
            problems.push(format!(
                "output_dir {} exists and is not a directory",
                self.output_dir.display()
            ));
        }
        if self.models.is_empty() {
            problems.push("models must list at least one variant".into());
        }
        let mut variants = Vec::new();
        for m in &self.models {
            match m.parse::<Variant>() {
                Ok(v) => variants.push(v),
                Err(e) => problems.push(e.to_string()),
            }
        }
        let needs_weights = self.pretrained_backbone && variants.iter().any(|v| *v != Variant::SimpleCnn);
        if needs_weights {
            match &self.weights_dir {
                Some(w) if w.is_dir() => {}
                Some(w) => problems.push(format!(
                    "weights_dir {} is not a directory (set {WEIGHTS_ENV} or pass --no-pretrained)",
                    w.display()
                )),
                None => problems.push(format!(
                    "pretrained_backbone needs weights_dir (set {WEIGHTS_ENV} or pass --no-pretrained)"
                )),
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            problems.push(format!(
                "split.train_fraction {} must be in (0, 1)",
                self.split.train_fraction
            ));
        }
        if self.benchmark.per_class == 0 || self.benchmark.batch_size == 0 {
            problems.push("benchmark.per_class and benchmark.batch_size must be >= 1".into());
        }
        if let Err(e) = self.training.validate() {
            problems.push(format!("training: {e}"));
        }
        if let Err(e) = self.augmentation.validate() {
            problems.push(format!("augmentation: {e}"));
        }
        for v in &variants {
            if let Err(e) = self.model_spec(*v).validate() {
                problems.push(e.to_string());
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "invalid config:\n  - {}",
                problems.join("\n  - ")
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let c = RunConfig::from_toml_str("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.models.len(), 10);
        assert_eq!(c.benchmark.per_class, 10);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.weights_dir = Some("w".into());
        c.augmentation.image_size = (64, 48);
        let back = RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("sed = 3").is_err());
        assert!(RunConfig::from_toml_str("[training]\nepoch = 3").is_err());
    }

    #[test]
    fn validation_reports_all_problems() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.dataset_root = dir.path().join("absent");
        c.models = vec!["NOPE".into()];
        c.split.train_fraction = 1.5;
        let msg = c.validate(true).unwrap_err().to_string();
        assert!(msg.contains("dataset_root"), "{msg}");
        assert!(msg.contains("NOPE") && msg.contains("VGG19_FT_B"), "{msg}");
        assert!(msg.contains("train_fraction"), "{msg}");
    }

    #[test]
    fn pretrained_requires_weights_dir() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = RunConfig::default();
        c.dataset_root = dir.path().to_path_buf();
        assert!(c.validate(true).unwrap_err().to_string().contains(WEIGHTS_ENV));
        c.apply(&Overrides {
            no_pretrained: true,
            ..Default::default()
        });
        c.validate(true).unwrap();
    }

    #[test]
    fn seed_override_reaches_every_stage() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            seed: Some(42),
            ..Default::default()
        });
        assert_eq!(c.training.seed, 42);
        assert_eq!(c.augmentation.seed, 42);
        assert_eq!(c.split_spec().seed, 42);
        assert_eq!(c.model_spec(Variant::Vgg16Deep).init_seed, 42);
    }
}
