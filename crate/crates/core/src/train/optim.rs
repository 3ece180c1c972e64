use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use candle_nn::{AdamW, Optimizer as _, ParamsAdamW};

use crate::error::Result;
use crate::models::OptimizerFamily;

/// SGD with (heavy-ball) momentum: `v ← μ·v + g`, `θ ← θ − lr·v`.
pub struct SgdMomentum {
    vars: Vec<Var>,
    velocity: Vec<Option<Tensor>>,
    lr: f64,
    momentum: f64,
}

impl SgdMomentum {
    pub fn new(vars: Vec<Var>, lr: f64, momentum: f64) -> Self {
        let velocity = vec![None; vars.len()];
        SgdMomentum {
            vars,
            velocity,
            lr,
            momentum,
        }
    }

    fn step(&mut self, grads: &GradStore) -> Result<()> {
        for (var, vel) in self.vars.iter().zip(self.velocity.iter_mut()) {
            let Some(g) = grads.get(var) else { continue };
            let v = match vel.take() {
                Some(prev) => ((prev * self.momentum)? + g)?,
                None => g.clone(),
            };
            var.set(&var.as_tensor().sub(&(&v * self.lr)?)?)?;
            *vel = Some(v);
        }
        Ok(())
    }
}

pub enum Optimizer {
    Sgd(SgdMomentum),
    Adam(AdamW),
}

impl Optimizer {
    pub fn new(family: OptimizerFamily, vars: Vec<Var>, lr: f64, momentum: f64) -> Result<Self> {
        Ok(match family {
            OptimizerFamily::Sgd => Optimizer::Sgd(SgdMomentum::new(vars, lr, momentum)),
            OptimizerFamily::Adam => Optimizer::Adam(AdamW::new(
                vars,
                ParamsAdamW {
                    lr,
                    weight_decay: 0.0,
                    ..Default::default()
                },
            )?),
        })
    }

    pub fn backward_step(&mut self, loss: &Tensor) -> Result<()> {
        let grads = loss.backward()?;
        match self {
            Optimizer::Sgd(s) => s.step(&grads),
            Optimizer::Adam(a) => Ok(a.step(&grads)?),
        }
    }
}
