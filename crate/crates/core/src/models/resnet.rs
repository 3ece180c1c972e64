use candle_core::{Module, Tensor};
use candle_nn::{Conv2d, Conv2dConfig};

use super::layers::{conv2d, max_pool_3x3_s2, BatchNorm2d, Scope};
use crate::error::Result;

pub const FEATURE_CHANNELS: usize = 2048;
const EXPANSION: usize = 4;
const STAGES: [(usize, usize); 4] = [(3, 64), (4, 128), (6, 256), (3, 512)];

fn conv(scope: &Scope, c_in: usize, c_out: usize, k: usize, stride: usize) -> Result<Conv2d> {
    let cfg = Conv2dConfig {
        padding: k / 2,
        stride,
        ..Default::default()
    };
    conv2d(scope, c_in, c_out, k, cfg, false)
}

struct Bottleneck {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    downsample: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    fn new(scope: &Scope, c_in: usize, width: usize, stride: usize) -> Result<Self> {
        let c_out = width * EXPANSION;
        let downsample = if stride != 1 || c_in != c_out {
            let ds = scope.pp("downsample");
            Some((
                conv(&ds.pp(0), c_in, c_out, 1, stride)?,
                BatchNorm2d::new(&ds.pp(1), c_out)?,
            ))
        } else {
            None
        };
        Ok(Bottleneck {
            conv1: conv(&scope.pp("conv1"), c_in, width, 1, 1)?,
            bn1: BatchNorm2d::new(&scope.pp("bn1"), width)?,
            conv2: conv(&scope.pp("conv2"), width, width, 3, stride)?,
            bn2: BatchNorm2d::new(&scope.pp("bn2"), width)?,
            conv3: conv(&scope.pp("conv3"), width, c_out, 1, 1)?,
            bn3: BatchNorm2d::new(&scope.pp("bn3"), c_out)?,
            downsample,
        })
    }

    fn forward(&self, x: &Tensor, batch_stats: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, batch_stats)?.relu()?;
        let h = self.bn2.forward(&self.conv2.forward(&h)?, batch_stats)?.relu()?;
        let h = self.bn3.forward(&self.conv3.forward(&h)?, batch_stats)?;
        let shortcut = match &self.downsample {
            Some((c, bn)) => bn.forward(&c.forward(x)?, batch_stats)?,
            None => x.clone(),
        };
        Ok((h + shortcut)?.relu()?)
    }
}

/// ResNet-50 without the average pool and fully-connected top; maps
/// `B×3×H×W` to `B×2048×H/32×W/32`.
pub struct ResNet50 {
    conv1: Conv2d,
    bn1: BatchNorm2d,
    stages: Vec<Vec<Bottleneck>>,
}

impl ResNet50 {
    pub fn new(scope: &Scope) -> Result<Self> {
        let mut stages = Vec::new();
        let mut c_in = 64;
        for (i, &(blocks, width)) in STAGES.iter().enumerate() {
            let layer = scope.pp(format!("layer{}", i + 1));
            let mut stage = Vec::new();
            for b in 0..blocks {
                let stride = if b == 0 && i > 0 { 2 } else { 1 };
                stage.push(Bottleneck::new(&layer.pp(b), c_in, width, stride)?);
                c_in = width * EXPANSION;
            }
            stages.push(stage);
        }
        Ok(ResNet50 {
            conv1: conv(&scope.pp("conv1"), 3, 64, 7, 2)?,
            bn1: BatchNorm2d::new(&scope.pp("bn1"), 64)?,
            stages,
        })
    }

    pub fn forward(&self, x: &Tensor, batch_stats: bool) -> Result<Tensor> {
        let h = self.bn1.forward(&self.conv1.forward(x)?, batch_stats)?.relu()?;
        let mut h = max_pool_3x3_s2(&h)?;
        for stage in &self.stages {
            for block in stage {
                h = block.forward(&h, batch_stats)?;
            }
        }
        Ok(h)
    }
}
