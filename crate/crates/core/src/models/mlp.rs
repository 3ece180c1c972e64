//! A miniature dense network, dense(8→16)+ReLU→dense(16→10), built from the
//! same layer and parameter machinery as the full models. Small enough to
//! check gradients against finite differences.

use candle_core::{DType, Module, Tensor, Var};
use candle_nn::{Linear, VarMap};

use super::layers::{linear, ParamStore};
use crate::error::Result;

pub const INPUT_DIM: usize = 8;
pub const HIDDEN_DIM: usize = 16;
pub const OUTPUT_DIM: usize = 10;

pub struct DenseStandIn {
    varmap: VarMap,
    fc1: Linear,
    fc2: Linear,
}

impl DenseStandIn {
    pub fn new(seed: u64, dtype: DType) -> Result<Self> {
        let store = ParamStore::new(seed, dtype);
        let root = store.root();
        let fc1 = linear(&root.pp("fc1"), INPUT_DIM, HIDDEN_DIM)?;
        let fc2 = linear(&root.pp("fc2"), HIDDEN_DIM, OUTPUT_DIM)?;
        let (varmap, _) = store.into_parts();
        Ok(DenseStandIn { varmap, fc1, fc2 })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.fc1.forward(x)?.relu()?;
        Ok(self.fc2.forward(&h)?)
    }

    /// Parameters in name order.
    pub fn parameters(&self) -> Vec<(String, Var)> {
        let data = self.varmap.data().lock().expect("var map lock");
        let mut v: Vec<_> = data.iter().map(|(n, v)| (n.clone(), v.clone())).collect();
        v.sort_by(|a, b| a.0.cmp(&b.0));
        v
    }
}
