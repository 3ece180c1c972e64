//! Parameter storage with seeded initialisation, plus the handful of layers
//! candle does not provide in a differentiable, seedable form.

use std::cell::RefCell;
use std::collections::BTreeSet;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::{Conv2d, Conv2dConfig, Linear, VarMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;

/// Whether a forward pass is for training (dropout and batch statistics
/// active) or inference.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Const(f64),
    /// He normal, std = sqrt(2 / fan_in).
    KaimingNormal { fan_in: usize },
    /// U(-1/sqrt(fan_in), 1/sqrt(fan_in)), the usual dense-layer default.
    FanInUniform { fan_in: usize },
}

fn name_hash(name: &str) -> u64 {
    // FNV-1a
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Creates named variables in a [`VarMap`], initialising each from a stream
/// seeded by `(seed, name)` alone, so values do not depend on creation order.
pub struct ParamStore {
    varmap: VarMap,
    seed: u64,
    dtype: DType,
    device: Device,
    buffers: RefCell<BTreeSet<String>>,
}

impl ParamStore {
    pub fn new(seed: u64, dtype: DType) -> Self {
        ParamStore {
            varmap: VarMap::new(),
            seed,
            dtype,
            device: Device::Cpu,
            buffers: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn root(&self) -> Scope<'_> {
        Scope {
            store: self,
            prefix: String::new(),
        }
    }

    pub fn parameter_names_with_prefix(&self, prefix: &str) -> BTreeSet<String> {
        let buffers = self.buffers.borrow();
        let data = self.varmap.data().lock().expect("var map lock");
        data.keys()
            .filter(|n| n.starts_with(prefix) && !buffers.contains(*n))
            .cloned()
            .collect()
    }

    pub fn into_parts(self) -> (VarMap, BTreeSet<String>) {
        (self.varmap, self.buffers.into_inner())
    }

    fn create(&self, name: String, shape: &[usize], init: Init, buffer: bool) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ name_hash(&name));
        let values: Vec<f64> = match init {
            Init::Const(c) => vec![c; n],
            Init::KaimingNormal { fan_in } => {
                let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("finite std");
                (0..n).map(|_| dist.sample(&mut rng)).collect()
            }
            Init::FanInUniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
            }
        };
        let t = Tensor::from_vec(values, shape, &self.device)?.to_dtype(self.dtype)?;
        let var = Var::from_tensor(&t)?;
        let tensor = var.as_tensor().clone();
        self.varmap
            .data()
            .lock()
            .expect("var map lock")
            .insert(name.clone(), var);
        if buffer {
            self.buffers.borrow_mut().insert(name);
        }
        Ok(tensor)
    }
}

#[derive(Clone)]
pub struct Scope<'a> {
    store: &'a ParamStore,
    prefix: String,
}

impl<'a> Scope<'a> {
    pub fn pp(&self, name: impl std::fmt::Display) -> Scope<'a> {
        let prefix = if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{name}", self.prefix)
        };
        Scope {
            store: self.store,
            prefix,
        }
    }

    fn full(&self, leaf: &str) -> String {
        if self.prefix.is_empty() {
            leaf.to_string()
        } else {
            format!("{}.{leaf}", self.prefix)
        }
    }

    pub fn param(&self, leaf: &str, shape: &[usize], init: Init) -> Result<Tensor> {
        self.store.create(self.full(leaf), shape, init, false)
    }

    /// A non-trainable tensor that is still checkpointed (running statistics).
    pub fn buffer(&self, leaf: &str, shape: &[usize], value: f64) -> Result<Var> {
        self.store
            .create(self.full(leaf), shape, Init::Const(value), true)?;
        let name = self.full(leaf);
        let data = self.store.varmap.data().lock().expect("var map lock");
        Ok(data[&name].clone())
    }
}

pub fn linear(scope: &Scope, in_dim: usize, out_dim: usize) -> Result<Linear> {
    let init = Init::FanInUniform { fan_in: in_dim };
    let w = scope.param("weight", &[out_dim, in_dim], init)?;
    let b = scope.param("bias", &[out_dim], init)?;
    Ok(Linear::new(w, Some(b)))
}

pub fn conv2d(
    scope: &Scope,
    in_c: usize,
    out_c: usize,
    kernel: usize,
    cfg: Conv2dConfig,
    bias: bool,
) -> Result<Conv2d> {
    let fan_in = in_c * kernel * kernel;
    let w = scope.param(
        "weight",
        &[out_c, in_c, kernel, kernel],
        Init::KaimingNormal { fan_in },
    )?;
    let b = if bias {
        Some(scope.param("bias", &[out_c], Init::Const(0.0))?)
    } else {
        None
    };
    Ok(Conv2d::new(w, b, cfg))
}

/// Inverted dropout; masks are drawn from the training RNG so runs replay exactly.
pub fn dropout(x: &Tensor, p: f64, mode: &mut Mode) -> Result<Tensor> {
    let Mode::Train(rng) = mode else {
        return Ok(x.clone());
    };
    if p <= 0.0 {
        return Ok(x.clone());
    }
    let keep = 1.0 - p;
    let scale = 1.0 / keep;
    let mask: Vec<f32> = (0..x.elem_count())
        .map(|_| if rng.gen::<f64>() < keep { scale as f32 } else { 0.0 })
        .collect();
    let mask = Tensor::from_vec(mask, x.shape(), x.device())?.to_dtype(x.dtype())?;
    Ok(x.mul(&mask)?)
}

/// Spatial batch normalisation over `(N, C, H, W)`.
pub struct BatchNorm2d {
    weight: Tensor,
    bias: Tensor,
    running_mean: Var,
    running_var: Var,
    eps: f64,
    momentum: f64,
}

impl BatchNorm2d {
    pub fn new(scope: &Scope, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            weight: scope.param("weight", &[channels], Init::Const(1.0))?,
            bias: scope.param("bias", &[channels], Init::Const(0.0))?,
            running_mean: scope.buffer("running_mean", &[channels], 0.0)?,
            running_var: scope.buffer("running_var", &[channels], 1.0)?,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    /// `use_batch_stats` normalises with the batch statistics and updates the
    /// running estimates; otherwise the running estimates are used.
    pub fn forward(&self, x: &Tensor, use_batch_stats: bool) -> Result<Tensor> {
        let c = x.dim(1)?;
        let shape = [1, c, 1, 1];
        let (mean, var) = if use_batch_stats {
            let xt = x.transpose(0, 1)?.flatten_from(1)?;
            let n = xt.dim(1)?;
            let mean = xt.mean_keepdim(1)?;
            let var = xt.broadcast_sub(&mean)?.sqr()?.mean_keepdim(1)?;
            let unbiased = (n as f64 / (n.saturating_sub(1).max(1)) as f64) * self.momentum;
            let m = self.momentum;
            let new_mean = ((self.running_mean.as_tensor() * (1.0 - m))?
                + (mean.flatten_all()?.detach() * m)?)?;
            let new_var = ((self.running_var.as_tensor() * (1.0 - m))?
                + (var.flatten_all()?.detach() * unbiased)?)?;
            self.running_mean.set(&new_mean)?;
            self.running_var.set(&new_var)?;
            (mean.reshape(&shape)?, var.reshape(&shape)?)
        } else {
            (
                self.running_mean.as_detached_tensor().reshape(&shape)?,
                self.running_var.as_detached_tensor().reshape(&shape)?,
            )
        };
        let xn = x
            .broadcast_sub(&mean)?
            .broadcast_div(&(var + self.eps)?.sqrt()?)?;
        Ok(xn
            .broadcast_mul(&self.weight.reshape(&shape)?)?
            .broadcast_add(&self.bias.reshape(&shape)?)?)
    }
}

/// Layer normalisation over the last dimension.
pub struct LayerNorm {
    weight: Tensor,
    bias: Tensor,
    eps: f64,
}

impl LayerNorm {
    pub fn new(scope: &Scope, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            weight: scope.param("weight", &[dim], Init::Const(1.0))?,
            bias: scope.param("bias", &[dim], Init::Const(0.0))?,
            eps: 1e-5,
        })
    }
}

impl Module for LayerNorm {
    fn forward(&self, x: &Tensor) -> candle_core::Result<Tensor> {
        let mean = x.mean_keepdim(D::Minus1)?;
        let xc = x.broadcast_sub(&mean)?;
        let var = xc.sqr()?.mean_keepdim(D::Minus1)?;
        xc.broadcast_div(&(var + self.eps)?.sqrt()?)?
            .broadcast_mul(&self.weight)?
            .broadcast_add(&self.bias)
    }
}

/// 3x3 max pool, stride 2, padding 1, built from strided slices so it stays
/// differentiable. Zero padding is equivalent to -inf padding on
/// post-ReLU (non-negative) inputs.
pub fn max_pool_3x3_s2(x: &Tensor) -> Result<Tensor> {
    let (b, c, h, w) = x.dims4()?;
    let (ho, wo) = ((h - 1) / 2 + 1, (w - 1) / 2 + 1);
    // padded extent 2*out + 2 so that all three offsets can take 2*out rows
    let xp = x
        .pad_with_zeros(2, 1, 2 * ho + 1 - h)?
        .pad_with_zeros(3, 1, 2 * wo + 1 - w)?;
    let mut out: Option<Tensor> = None;
    for dy in 0..3 {
        for dx in 0..3 {
            let s = xp
                .narrow(2, dy, 2 * ho)?
                .narrow(3, dx, 2 * wo)?
                .reshape((b, c, ho, 2, wo, 2))?
                .narrow(3, 0, 1)?
                .narrow(5, 0, 1)?
                .reshape((b, c, ho, wo))?;
            out = Some(match out {
                None => s,
                Some(o) => o.maximum(&s)?,
            });
        }
    }
    Ok(out.expect("nine windows"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_depends_only_on_seed_and_name() {
        let a = ParamStore::new(3, DType::F32);
        let b = ParamStore::new(3, DType::F32);
        let ta = a.root().pp("x").param("weight", &[4, 4], Init::KaimingNormal { fan_in: 4 }).unwrap();
        b.root().pp("y").param("weight", &[2], Init::Const(0.0)).unwrap();
        let tb = b.root().pp("x").param("weight", &[4, 4], Init::KaimingNormal { fan_in: 4 }).unwrap();
        assert_eq!(
            ta.flatten_all().unwrap().to_vec1::<f32>().unwrap(),
            tb.flatten_all().unwrap().to_vec1::<f32>().unwrap()
        );
    }

    #[test]
    fn max_pool_matches_brute_force() {
        let (h, w) = (7, 6);
        let vals: Vec<f32> = (0..2 * h * w).map(|i| ((i * 37) % 23) as f32).collect();
        let x = Tensor::from_vec(vals.clone(), (1, 2, h, w), &Device::Cpu).unwrap();
        let y = max_pool_3x3_s2(&x).unwrap();
        let (ho, wo) = (4, 3);
        assert_eq!(y.dims4().unwrap(), (1, 2, ho, wo));
        let got = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for c in 0..2 {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut m = 0f32;
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (2 * oy + ky) as isize - 1;
                            let ix = (2 * ox + kx) as isize - 1;
                            if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                                m = m.max(vals[c * h * w + iy as usize * w + ix as usize]);
                            }
                        }
                    }
                    assert_eq!(got[c * ho * wo + oy * wo + ox], m);
                }
            }
        }
    }

    #[test]
    fn dropout_is_identity_in_eval_and_seeded_in_train() {
        let x = Tensor::ones((4, 8), DType::F32, &Device::Cpu).unwrap();
        let y = dropout(&x, 0.5, &mut Mode::Eval).unwrap();
        assert_eq!(y.to_vec2::<f32>().unwrap(), x.to_vec2::<f32>().unwrap());
        let mut r1 = ChaCha8Rng::seed_from_u64(1);
        let mut r2 = ChaCha8Rng::seed_from_u64(1);
        let a = dropout(&x, 0.5, &mut Mode::Train(&mut r1)).unwrap();
        let b = dropout(&x, 0.5, &mut Mode::Train(&mut r2)).unwrap();
        assert_eq!(a.to_vec2::<f32>().unwrap(), b.to_vec2::<f32>().unwrap());
        assert!(a.flatten_all().unwrap().to_vec1::<f32>().unwrap().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
