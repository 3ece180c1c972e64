use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig, Linear};

use super::layers::{conv2d, linear, Scope};
use crate::error::Result;

const CHANNELS: [usize; 3] = [32, 64, 128];

/// Three conv(3x3, same) + ReLU + 2x2 max-pool stages, then dense(512) and
/// the class layer.
pub struct SimpleCnn {
    convs: Vec<Conv2d>,
    fc1: Linear,
    fc2: Linear,
}

pub fn flatten_width(input: (u32, u32)) -> usize {
    let (h, w) = (input.0 as usize >> 3, input.1 as usize >> 3);
    CHANNELS[2] * h * w
}

impl SimpleCnn {
    pub fn new(scope: &Scope, input: (u32, u32), classes: usize) -> Result<Self> {
        let same = Conv2dConfig {
            padding: 1,
            ..Default::default()
        };
        let mut convs = Vec::new();
        let mut c_in = 3;
        for (i, &c) in CHANNELS.iter().enumerate() {
            convs.push(conv2d(&scope.pp(format!("conv{}", i + 1)), c_in, c, 3, same, true)?);
            c_in = c;
        }
        Ok(SimpleCnn {
            convs,
            fc1: linear(&scope.pp("fc1"), flatten_width(input), 512)?,
            fc2: linear(&scope.pp("fc2"), 512, classes)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut h = x.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?.max_pool2d(2)?;
        }
        let h = self.fc1.forward(&h.flatten_from(1)?)?.relu()?;
        Ok(self.fc2.forward(&h)?)
    }
}
