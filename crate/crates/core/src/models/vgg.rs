use std::collections::BTreeSet;

use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig, Linear};

use super::layers::{conv2d, dropout, linear, Mode, Scope};
use super::{VggDepth, VggHead};
use crate::error::Result;

/// Output channels of every conv, grouped into pooling blocks.
pub fn block_layout(depth: VggDepth) -> Vec<Vec<usize>> {
    match depth {
        VggDepth::Vgg16 => vec![
            vec![64, 64],
            vec![128, 128],
            vec![256, 256, 256],
            vec![512, 512, 512],
            vec![512, 512, 512],
        ],
        VggDepth::Vgg19 => vec![
            vec![64, 64],
            vec![128, 128],
            vec![256, 256, 256, 256],
            vec![512, 512, 512, 512],
            vec![512, 512, 512, 512],
        ],
    }
}

/// Number of trailing weighted backbone layers left trainable by the
/// partially fine-tuned heads.
pub const FINE_TUNED_TAIL: usize = 4;

pub const DROPOUT: f64 = 0.5;

struct ConvLayer {
    conv: Conv2d,
    name: String,
    ends_block: bool,
}

/// VGG convolutional base (no classifier top) plus one of three heads.
pub struct VggNet {
    convs: Vec<ConvLayer>,
    head: VggHead,
    fc1: Option<Linear>,
    fc_out: Linear,
}

impl VggNet {
    pub fn new(
        scope: &Scope,
        depth: VggDepth,
        head: VggHead,
        input: (u32, u32),
        classes: usize,
    ) -> Result<Self> {
        let same = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let features = scope.pp("backbone").pp("features");
        let mut convs = Vec::new();
        let mut c_in = 3;
        // torchvision indexing: every conv is followed by a ReLU, every block by a pool
        let mut idx = 0;
        for block in block_layout(depth) {
            let n = block.len();
            for (j, c_out) in block.into_iter().enumerate() {
                let name = format!("backbone.features.{idx}");
                convs.push(ConvLayer {
                    conv: conv2d(&features.pp(idx), c_in, c_out, 3, same, true)?,
                    name,
                    ends_block: j + 1 == n,
                });
                c_in = c_out;
                idx += 2;
            }
            idx += 1;
        }

        let head_scope = scope.pp("head");
        let spatial = (input.0 as usize >> 5) * (input.1 as usize >> 5);
        let (fc1, fc_out) = match head {
            VggHead::Deep | VggHead::Shallow => {
                let units = if head == VggHead::Deep { 500 } else { 256 };
                (
                    Some(linear(&head_scope.pp("fc1"), 512 * spatial, units)?),
                    linear(&head_scope.pp("fc2"), units, classes)?,
                )
            }
            VggHead::FineTuned { .. } => (None, linear(&head_scope.pp("fc"), 512, classes)?),
        };
        Ok(VggNet {
            convs,
            head,
            fc1,
            fc_out,
        })
    }

    /// Number of leading conv layers whose parameters are frozen.
    fn frozen_prefix(&self) -> usize {
        match self.head {
            VggHead::Shallow => self.convs.len(),
            VggHead::FineTuned { partial: true } => self.convs.len() - FINE_TUNED_TAIL,
            _ => 0,
        }
    }

    pub fn frozen_parameter_names(&self) -> BTreeSet<String> {
        self.convs[..self.frozen_prefix()]
            .iter()
            .flat_map(|l| [format!("{}.weight", l.name), format!("{}.bias", l.name)])
            .collect()
    }

    pub fn forward(&self, x: &Tensor, mode: &mut Mode) -> Result<Tensor> {
        let frozen = self.frozen_prefix();
        let mut h = x.clone();
        for (i, layer) in self.convs.iter().enumerate() {
            h = layer.conv.forward(&h)?.relu()?;
            if layer.ends_block {
                h = h.max_pool2d(2)?;
            }
            // nothing upstream of a frozen layer is trainable
            if i + 1 == frozen && mode.is_train() {
                h = h.detach();
            }
        }
        match &self.fc1 {
            Some(fc1) => {
                let h = fc1.forward(&h.flatten_from(1)?)?.relu()?;
                let h = dropout(&h, DROPOUT, mode)?;
                Ok(self.fc_out.forward(&h)?)
            }
            None => {
                let pooled = h.mean((2, 3))?;
                Ok(self.fc_out.forward(&pooled)?)
            }
        }
    }
}
