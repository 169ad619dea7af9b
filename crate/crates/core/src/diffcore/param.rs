use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ParamId(pub(crate) usize);

/// A learnable tensor with its gradient slot and momentum buffer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    #[serde(skip)]
    pub grad: Option<Tensor>,
    pub momentum: Tensor,
}

impl Parameter {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let momentum = Tensor::zeros(value.shape());
        Parameter {
            name: name.into(),
            value,
            grad: None,
            momentum,
        }
    }
}

/// Owns every parameter of a model, addressed by [`ParamId`].
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ParamStore {
    params: Vec<Parameter>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.params.push(Parameter::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Weight matrix `[rows x cols]` drawn from U(-s, s) with s = 1/sqrt(cols).
    pub fn add_weight<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut R) -> ParamId {
        let s = 1.0 / (cols.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect();
        self.add(name, Tensor::from_parts(vec![rows, cols], data))
    }

    pub fn add_bias(&mut self, name: impl Into<String>, n: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[n]))
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::dim("set_value", p.value.shape(), value.shape()));
        }
        p.value = value;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Resets every gradient slot to zeros.
    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            match &mut p.grad {
                Some(g) => g.data_mut().iter_mut().for_each(|v| *v = 0.0),
                None => p.grad = Some(Tensor::zeros(p.value.shape())),
            }
        }
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &[f64]) {
        let p = &mut self.params[id.0];
        let slot = p.grad.get_or_insert_with(|| Tensor::zeros(p.value.shape()));
        for (g, d) in slot.data_mut().iter_mut().zip(grad) {
            *g += d;
        }
    }

    /// Global L2 norm of all populated gradients.
    pub fn grad_norm(&self) -> f64 {
        self.params
            .iter()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            let scale = max_norm / norm;
            for p in &mut self.params {
                if let Some(g) = &mut p.grad {
                    g.data_mut().iter_mut().for_each(|v| *v *= scale);
                }
            }
        }
        norm
    }

    /// Copies values and momentum buffers from `other`, matching by name.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        for p in &mut self.params {
            let src = other
                .params
                .iter()
                .find(|q| q.name == p.name)
                .ok_or_else(|| Error::Contract(format!("parameter {} missing", p.name)))?;
            if src.value.shape() != p.value.shape() {
                return Err(Error::dim("load_from", p.value.shape(), src.value.shape()));
            }
            p.value = src.value.clone();
            p.momentum = src.momentum.clone();
        }
        Ok(())
    }
}
