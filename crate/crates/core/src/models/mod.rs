//! The ten classifier variants behind a single [`ModelHandle`].
//!
//! Every network consumes `B×H×W×3` real images in `[0, 1]` and produces
//! `B×num_classes` logits; [`ModelHandle::predict_batch`] applies the softmax.

mod hybrid;
pub mod layers;
pub mod mlp;
mod resnet;
mod simple_cnn;
mod vgg;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::VarMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::{ImageTensor, PixelForm};
use layers::{Mode, ParamStore};

pub use hybrid::HybridNet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "SIMPLE_CNN")]
    SimpleCnn,
    #[serde(rename = "VGG16_DEEP")]
    Vgg16Deep,
    #[serde(rename = "VGG16_SHALLOW")]
    Vgg16Shallow,
    #[serde(rename = "VGG16_FT_B")]
    Vgg16FtB,
    #[serde(rename = "VGG16_FT_NB")]
    Vgg16FtNb,
    #[serde(rename = "VGG19_DEEP")]
    Vgg19Deep,
    #[serde(rename = "VGG19_SHALLOW")]
    Vgg19Shallow,
    #[serde(rename = "VGG19_FT_B")]
    Vgg19FtB,
    #[serde(rename = "VGG19_FT_NB")]
    Vgg19FtNb,
    #[serde(rename = "HYBRID_CNN_TRANSFORMER")]
    HybridCnnTransformer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VggDepth {
    Vgg16,
    Vgg19,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VggHead {
    /// flatten → dense(500) → dropout → dense(classes)
    Deep,
    /// frozen backbone; flatten → dense(256) → dropout → dense(classes)
    Shallow,
    /// global average pool → dense(classes); `partial` freezes all but the
    /// last four weighted backbone layers
    FineTuned { partial: bool },
}

impl Variant {
    pub const ALL: [Variant; 10] = [
        Variant::SimpleCnn,
        Variant::Vgg16Deep,
        Variant::Vgg16Shallow,
        Variant::Vgg16FtB,
        Variant::Vgg16FtNb,
        Variant::Vgg19Deep,
        Variant::Vgg19Shallow,
        Variant::Vgg19FtB,
        Variant::Vgg19FtNb,
        Variant::HybridCnnTransformer,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::SimpleCnn => "SIMPLE_CNN",
            Variant::Vgg16Deep => "VGG16_DEEP",
            Variant::Vgg16Shallow => "VGG16_SHALLOW",
            Variant::Vgg16FtB => "VGG16_FT_B",
            Variant::Vgg16FtNb => "VGG16_FT_NB",
            Variant::Vgg19Deep => "VGG19_DEEP",
            Variant::Vgg19Shallow => "VGG19_SHALLOW",
            Variant::Vgg19FtB => "VGG19_FT_B",
            Variant::Vgg19FtNb => "VGG19_FT_NB",
            Variant::HybridCnnTransformer => "HYBRID_CNN_TRANSFORMER",
        }
    }

    /// Human-readable row label for reports.
    pub fn display_name(self) -> &'static str {
        match self {
            Variant::SimpleCnn => "Simple CNN",
            Variant::Vgg16Deep => "VGG16 Deep",
            Variant::Vgg16Shallow => "VGG16 Shallow",
            Variant::Vgg16FtB => "VGG16 FT Batched",
            Variant::Vgg16FtNb => "VGG16 FT Non-Batched",
            Variant::Vgg19Deep => "VGG19 Deep",
            Variant::Vgg19Shallow => "VGG19 Shallow",
            Variant::Vgg19FtB => "VGG19 FT Batched",
            Variant::Vgg19FtNb => "VGG19 FT Non-Batched",
            Variant::HybridCnnTransformer => "Hybrid CNN Transformer",
        }
    }

    pub fn vgg(self) -> Option<(VggDepth, VggHead)> {
        use Variant::*;
        let depth = match self {
            Vgg16Deep | Vgg16Shallow | Vgg16FtB | Vgg16FtNb => VggDepth::Vgg16,
            Vgg19Deep | Vgg19Shallow | Vgg19FtB | Vgg19FtNb => VggDepth::Vgg19,
            _ => return None,
        };
        let head = match self {
            Vgg16Deep | Vgg19Deep => VggHead::Deep,
            Vgg16Shallow | Vgg19Shallow => VggHead::Shallow,
            Vgg16FtB | Vgg19FtB => VggHead::FineTuned { partial: true },
            _ => VggHead::FineTuned { partial: false },
        };
        Some((depth, head))
    }

    /// Optimizer family the harness uses for this variant.
    pub fn optimizer_family(self) -> OptimizerFamily {
        match self.vgg() {
            Some((_, VggHead::FineTuned { .. })) => OptimizerFamily::Sgd,
            _ => OptimizerFamily::Adam,
        }
    }

    /// Smallest square input the architecture accepts.
    pub fn min_input(self) -> u32 {
        match self {
            Variant::SimpleCnn => 8,
            _ => 32,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.id().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let ids: Vec<_> = Variant::ALL.iter().map(|v| v.id()).collect();
                Error::Usage(format!(
                    "unknown model variant '{s}'; valid ids: {}",
                    ids.join(", ")
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerFamily {
    /// SGD with momentum.
    Sgd,
    /// Adaptive-moment (Adam).
    Adam,
}

/// Transformer settings for the hybrid variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HybridConfig {
    pub encoder_layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub freeze_backbone: bool,
}

impl Default for HybridConfig {
    fn default() -> Self {
        HybridConfig {
            encoder_layers: 2,
            heads: 8,
            model_dim: 512,
            ff_dim: 1024,
            dropout: 0.1,
            freeze_backbone: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub num_classes: usize,
    pub pretrained_backbone: bool,
    /// `(height, width)`.
    pub input_size: (u32, u32),
    #[serde(default)]
    pub hybrid: HybridConfig,
    #[serde(default)]
    pub weights_dir: Option<PathBuf>,
    /// Seed for parameter initialisation.
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelSpec {
    pub fn new(variant: Variant) -> Self {
        ModelSpec {
            variant,
            num_classes: 10,
            pretrained_backbone: false,
            input_size: (224, 224),
            hybrid: HybridConfig::default(),
            weights_dir: None,
            init_seed: 0,
        }
    }

    pub fn with_input_size(mut self, h: u32, w: u32) -> Self {
        self.input_size = (h, w);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Argument(format!(
                "num_classes must be >= 2, got {}",
                self.num_classes
            )));
        }
        let min = self.variant.min_input();
        if self.input_size.0 < min || self.input_size.1 < min {
            return Err(Error::Argument(format!(
                "{} needs inputs of at least {min}x{min}, got {}x{}",
                self.variant, self.input_size.0, self.input_size.1
            )));
        }
        if self.variant == Variant::HybridCnnTransformer {
            let h = &self.hybrid;
            if h.heads == 0 || h.model_dim % h.heads != 0 || h.encoder_layers == 0 {
                return Err(Error::Argument(format!(
                    "hybrid model_dim {} must be a positive multiple of heads {} and encoder_layers >= 1",
                    h.model_dim, h.heads
                )));
            }
        }
        Ok(())
    }
}

/// Parameters that receive no updates during training.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FreezePolicy {
    frozen: BTreeSet<String>,
}

impl FreezePolicy {
    pub fn new(frozen: BTreeSet<String>) -> Self {
        FreezePolicy { frozen }
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.contains(name)
    }

    pub fn frozen_parameter_names(&self) -> &BTreeSet<String> {
        &self.frozen
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCounts {
    pub trainable: usize,
    pub frozen: usize,
}

impl ParameterCounts {
    pub fn total(&self) -> usize {
        self.trainable + self.frozen
    }
}

enum Net {
    Simple(simple_cnn::SimpleCnn),
    Vgg(vgg::VggNet),
    Hybrid(HybridNet),
}

/// A built model: its spec, named parameters, freeze policy and forward pass.
pub struct ModelHandle {
    spec: ModelSpec,
    varmap: VarMap,
    buffers: BTreeSet<String>,
    freeze: FreezePolicy,
    net: Net,
}

impl fmt::Debug for ModelHandle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelHandle")
            .field("spec", &self.spec)
            .field("parameters", &self.count_parameters())
            .finish()
    }
}

impl ModelHandle {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn variant(&self) -> Variant {
        self.spec.variant
    }

    pub fn freeze_policy(&self) -> &FreezePolicy {
        &self.freeze
    }

    pub fn optimizer_family(&self) -> OptimizerFamily {
        self.spec.variant.optimizer_family()
    }

    pub fn count_parameters(&self) -> ParameterCounts {
        let data = self.varmap.data().lock().expect("var map lock");
        let mut counts = ParameterCounts {
            trainable: 0,
            frozen: 0,
        };
        for (name, var) in data.iter() {
            if self.buffers.contains(name) {
                continue;
            }
            if self.freeze.is_frozen(name) {
                counts.frozen += var.elem_count();
            } else {
                counts.trainable += var.elem_count();
            }
        }
        counts
    }

    /// Trainable variables in name order.
    pub fn trainable_vars(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("var map lock");
        let mut out: Vec<_> = data
            .iter()
            .filter(|(n, _)| !self.buffers.contains(*n) && !self.freeze.is_frozen(n))
            .map(|(n, v)| (n.clone(), v.clone()))
            .collect();
        out.sort_by(|a, b| a.0.cmp(&b.0));
        out
    }

    /// Snapshot of every stored tensor (parameters and running statistics).
    pub fn state(&self) -> BTreeMap<String, Tensor> {
        let data = self.varmap.data().lock().expect("var map lock");
        data.iter()
            .map(|(n, v)| (n.clone(), v.as_tensor().copy().expect("cpu copy")))
            .collect()
    }

    pub fn parameter_names(&self) -> Vec<String> {
        let data = self.varmap.data().lock().expect("var map lock");
        let mut names: Vec<_> = data
            .keys()
            .filter(|n| !self.buffers.contains(*n))
            .cloned()
            .collect();
        names.sort();
        names
    }

    pub(crate) fn set_state(&self, name: &str, value: &Tensor) -> Result<()> {
        let data = self.varmap.data().lock().expect("var map lock");
        let var = data
            .get(name)
            .ok_or_else(|| Error::Format(format!("unexpected tensor '{name}'")))?;
        if var.shape() != value.shape() {
            return Err(Error::Format(format!(
                "tensor '{name}' has shape {:?}, model expects {:?}",
                value.dims(),
                var.dims()
            )));
        }
        var.set(&value.to_dtype(var.dtype())?)?;
        Ok(())
    }

    pub(crate) fn stored_names(&self) -> BTreeSet<String> {
        let data = self.varmap.data().lock().expect("var map lock");
        data.keys().cloned().collect()
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let (h, w) = self.spec.input_size;
        match batch.dims() {
            [_, bh, bw, 3] if *bh == h as usize && *bw == w as usize => Ok(()),
            dims => Err(Error::Argument(format!(
                "expected a B×{h}×{w}×3 batch, got {dims:?}"
            ))),
        }
    }

    /// Logits for a `B×H×W×3` batch.
    pub fn forward(&self, batch: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        self.check_batch(batch)?;
        let x = batch.permute((0, 3, 1, 2))?.contiguous()?;
        match &self.net {
            Net::Simple(n) => n.forward(&x),
            Net::Vgg(n) => n.forward(&x, mode),
            Net::Hybrid(n) => n.forward(&x, mode),
        }
    }

    /// Softmax probabilities in inference mode, `B×num_classes`.
    pub fn predict_batch(&self, batch: &Tensor) -> Result<Tensor> {
        let logits = self.forward(batch, &mut Mode::Eval)?;
        Ok(candle_nn::ops::softmax(&logits, D::Minus1)?)
    }

    pub fn predict_images(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let batch = images_to_batch(images)?;
        Ok(self.predict_batch(&batch)?.to_vec2::<f32>()?)
    }

    pub fn as_hybrid(&self) -> Option<&HybridNet> {
        match &self.net {
            Net::Hybrid(h) => Some(h),
            _ => None,
        }
    }
}

/// Stacks real-form images into a `B×H×W×3` tensor.
pub fn images_to_batch(images: &[ImageTensor]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::Argument("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * (h * w * 3) as usize);
    for img in images {
        if img.form() != PixelForm::Real || img.height() != h || img.width() != w {
            return Err(Error::Argument(format!(
                "batch images must all be real-valued {h}x{w}"
            )));
        }
        data.extend_from_slice(img.real().expect("real form"));
    }
    Ok(Tensor::from_vec(
        data,
        (images.len(), h as usize, w as usize, 3),
        &Device::Cpu,
    )?)
}

fn finish(spec: ModelSpec, store: ParamStore, net: Net, frozen: BTreeSet<String>) -> Result<ModelHandle> {
    let (varmap, buffers) = store.into_parts();
    let handle = ModelHandle {
        spec,
        varmap,
        buffers,
        freeze: FreezePolicy::new(frozen),
        net,
    };
    if handle.spec.pretrained_backbone {
        load_pretrained_backbone(&handle)?;
    }
    Ok(handle)
}

fn wrong_variant(op: &str, v: Variant) -> Error {
    Error::Argument(format!("{op} cannot build variant {v}"))
}

pub fn build_simple_cnn(spec: &ModelSpec) -> Result<ModelHandle> {
    if spec.variant != Variant::SimpleCnn {
        return Err(wrong_variant("build_simple_cnn", spec.variant));
    }
    spec.validate()?;
    let store = ParamStore::new(spec.init_seed, DType::F32);
    let net = simple_cnn::SimpleCnn::new(&store.root(), spec.input_size, spec.num_classes)?;
    finish(spec.clone(), store, Net::Simple(net), BTreeSet::new())
}

fn build_vgg(spec: &ModelSpec, op: &str, accept: impl Fn(VggHead) -> bool) -> Result<ModelHandle> {
    let (depth, head) = spec
        .variant
        .vgg()
        .filter(|(_, h)| accept(*h))
        .ok_or_else(|| wrong_variant(op, spec.variant))?;
    spec.validate()?;
    let store = ParamStore::new(spec.init_seed, DType::F32);
    let net = vgg::VggNet::new(&store.root(), depth, head, spec.input_size, spec.num_classes)?;
    let frozen = net.frozen_parameter_names();
    finish(spec.clone(), store, Net::Vgg(net), frozen)
}

pub fn build_vgg_deep(spec: &ModelSpec) -> Result<ModelHandle> {
    build_vgg(spec, "build_vgg_deep", |h| h == VggHead::Deep)
}

pub fn build_vgg_shallow(spec: &ModelSpec) -> Result<ModelHandle> {
    build_vgg(spec, "build_vgg_shallow", |h| h == VggHead::Shallow)
}

pub fn build_vgg_finetuned(spec: &ModelSpec) -> Result<ModelHandle> {
    build_vgg(spec, "build_vgg_finetuned", |h| {
        matches!(h, VggHead::FineTuned { .. })
    })
}

pub fn build_hybrid(spec: &ModelSpec) -> Result<ModelHandle> {
    if spec.variant != Variant::HybridCnnTransformer {
        return Err(wrong_variant("build_hybrid", spec.variant));
    }
    spec.validate()?;
    let store = ParamStore::new(spec.init_seed, DType::F32);
    let net = HybridNet::new(&store.root(), &spec.hybrid, spec.num_classes)?;
    let frozen = if spec.hybrid.freeze_backbone {
        net.backbone_parameter_names(&store)
    } else {
        BTreeSet::new()
    };
    finish(spec.clone(), store, Net::Hybrid(net), frozen)
}

/// Builds whichever variant `spec` names.
pub fn build_model(spec: &ModelSpec) -> Result<ModelHandle> {
    match spec.variant {
        Variant::SimpleCnn => build_simple_cnn(spec),
        Variant::HybridCnnTransformer => build_hybrid(spec),
        v => match v.vgg().map(|(_, h)| h) {
            Some(VggHead::Deep) => build_vgg_deep(spec),
            Some(VggHead::Shallow) => build_vgg_shallow(spec),
            _ => build_vgg_finetuned(spec),
        },
    }
}

pub fn count_parameters(handle: &ModelHandle) -> ParameterCounts {
    handle.count_parameters()
}

pub fn predict_batch(handle: &ModelHandle, batch: &Tensor) -> Result<Tensor> {
    handle.predict_batch(batch)
}

const BACKBONE_PREFIX: &str = "backbone.";

fn backbone_file(variant: Variant) -> Option<&'static str> {
    match variant.vgg() {
        Some((VggDepth::Vgg16, _)) => Some("vgg16.safetensors"),
        Some((VggDepth::Vgg19, _)) => Some("vgg19.safetensors"),
        None if variant == Variant::HybridCnnTransformer => Some("resnet50.safetensors"),
        None => None,
    }
}

/// Copies `backbone.*` tensors from `<weights_dir>/<arch>.safetensors`, whose
/// keys follow the usual torchvision naming (`features.0.weight`,
/// `layer1.0.conv1.weight`, …).
fn load_pretrained_backbone(handle: &ModelHandle) -> Result<()> {
    let Some(file) = backbone_file(handle.variant()) else {
        return Ok(());
    };
    let path = handle
        .spec
        .weights_dir
        .as_ref()
        .map(|d| d.join(file))
        .filter(|p| p.is_file())
        .ok_or_else(|| {
            Error::Resource(format!(
                "pretrained weights for {} not found (expected {file} in weights_dir {}); \
                 export ImageNet weights to that file, set weights_dir / DISTRACTNET_WEIGHTS_DIR, \
                 or pass --no-pretrained to train from random initialisation",
                handle.variant(),
                handle
                    .spec
                    .weights_dir
                    .as_ref()
                    .map(|d| d.display().to_string())
                    .unwrap_or_else(|| "<unset>".into())
            ))
        })?;
    let tensors = candle_core::safetensors::load(&path, &Device::Cpu)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    for name in handle.stored_names() {
        let Some(key) = name.strip_prefix(BACKBONE_PREFIX) else {
            continue;
        };
        let t = tensors.get(key).ok_or_else(|| {
            Error::Format(format!("{} lacks tensor '{key}'", path.display()))
        })?;
        handle.set_state(&name, t)?;
    }
    Ok(())
}
