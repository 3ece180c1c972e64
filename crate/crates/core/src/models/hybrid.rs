use std::collections::BTreeSet;

use candle_core::{Module, Tensor, D};
use candle_nn::Linear;

use super::layers::{dropout, linear, LayerNorm, Mode, ParamStore, Scope};
use super::resnet::{ResNet50, FEATURE_CHANNELS};
use super::HybridConfig;
use crate::error::Result;

struct EncoderLayer {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    linear1: Linear,
    linear2: Linear,
    norm1: LayerNorm,
    norm2: LayerNorm,
    heads: usize,
    dropout: f64,
}

impl EncoderLayer {
    fn new(scope: &Scope, cfg: &HybridConfig) -> Result<Self> {
        let d = cfg.model_dim;
        let attn = scope.pp("self_attn");
        Ok(EncoderLayer {
            q: linear(&attn.pp("q_proj"), d, d)?,
            k: linear(&attn.pp("k_proj"), d, d)?,
            v: linear(&attn.pp("v_proj"), d, d)?,
            out: linear(&attn.pp("out_proj"), d, d)?,
            linear1: linear(&scope.pp("linear1"), d, cfg.ff_dim)?,
            linear2: linear(&scope.pp("linear2"), cfg.ff_dim, d)?,
            norm1: LayerNorm::new(&scope.pp("norm1"), d)?,
            norm2: LayerNorm::new(&scope.pp("norm2"), d)?,
            heads: cfg.heads,
            dropout: cfg.dropout,
        })
    }

    fn split_heads(&self, x: &Tensor) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        Ok(x.reshape((b, t, self.heads, d / self.heads))?
            .transpose(1, 2)?
            .contiguous()?)
    }

    fn attention(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let (b, t, d) = x.dims3()?;
        let q = self.split_heads(&self.q.forward(x)?)?;
        let k = self.split_heads(&self.k.forward(x)?)?;
        let v = self.split_heads(&self.v.forward(x)?)?;
        let scale = 1.0 / ((d / self.heads) as f64).sqrt();
        let scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?;
        let weights = candle_nn::ops::softmax(&scores, D::Minus1)?;
        let weights = dropout(&weights, self.dropout, mode)?;
        let ctx = weights
            .matmul(&v)?
            .transpose(1, 2)?
            .contiguous()?
            .reshape((b, t, d))?;
        Ok(self.out.forward(&ctx)?)
    }

    // post-norm residual blocks
    fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let a = self.attention(x, mode)?;
        let x = self.norm1.forward(&(x + dropout(&a, self.dropout, mode)?)?)?;
        let f = self.linear1.forward(&x)?.relu()?;
        let f = self.linear2.forward(&dropout(&f, self.dropout, mode)?)?;
        Ok(self.norm2.forward(&(x + dropout(&f, self.dropout, mode)?)?)?)
    }
}

/// ResNet-50 feature map → per-position projection to `model_dim` tokens →
/// transformer encoder (no positional encoding) → token mean → class layer.
pub struct HybridNet {
    backbone: ResNet50,
    proj: Linear,
    layers: Vec<EncoderLayer>,
    head: Linear,
    freeze_backbone: bool,
}

impl HybridNet {
    pub fn new(scope: &Scope, cfg: &HybridConfig, classes: usize) -> Result<Self> {
        let enc = scope.pp("encoder").pp("layers");
        let layers = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(&enc.pp(i), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(HybridNet {
            backbone: ResNet50::new(&scope.pp("backbone"))?,
            proj: linear(&scope.pp("proj"), FEATURE_CHANNELS, cfg.model_dim)?,
            layers,
            head: linear(&scope.pp("head"), cfg.model_dim, classes)?,
            freeze_backbone: cfg.freeze_backbone,
        })
    }

    pub(super) fn backbone_parameter_names(&self, store: &ParamStore) -> BTreeSet<String> {
        store.parameter_names_with_prefix("backbone.")
    }

    /// `B×3×H×W` images to the `B×T×model_dim` token sequence, one token per
    /// backbone feature-map position.
    pub fn tokens(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let batch_stats = mode.is_train() && !self.freeze_backbone;
        let mut f = self.backbone.forward(x, batch_stats)?;
        if self.freeze_backbone {
            f = f.detach();
        }
        let seq = f.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        Ok(self.proj.forward(&seq)?)
    }

    /// Encoder, mean over tokens, class layer.
    pub fn classify_tokens(&self, tokens: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let mut h = tokens.clone();
        for layer in &self.layers {
            h = layer.forward(&h, mode)?;
        }
        Ok(self.head.forward(&h.mean(1)?)?)
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let t = self.tokens(x, mode)?;
        self.classify_tokens(&t, mode)
    }
}
