use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BufferId(usize);

impl ParamId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

/// Owns the learnable tensors (and non-learnable running buffers) of one
/// or more networks. Names are unique and stable across runs.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<NamedTensor>,
    buffers: Vec<NamedTensor>,
    names: HashMap<String, usize>,
    buffer_names: HashMap<String, usize>,
}

/// `U(-b, b)` with `b = 1/sqrt(fan_in)`, drawn from the parameter's own stream.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: Rng) -> Tensor {
    let b = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::rand_uniform(shape, -b, b, rng)
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_param(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.names.insert(name.clone(), self.params.len());
        self.params.push(NamedTensor { name, tensor });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn add_buffer(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<BufferId> {
        let name = name.into();
        if self.buffer_names.contains_key(&name) {
            return Err(Error::Config(format!("duplicate buffer name {name}")));
        }
        self.buffer_names.insert(name.clone(), self.buffers.len());
        self.buffers.push(NamedTensor { name, tensor });
        Ok(BufferId(self.buffers.len() - 1))
    }

    pub fn param(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn param_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].tensor
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0].tensor
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.get(name).map(|&i| ParamId(i))
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn params(&self) -> &[NamedTensor] {
        &self.params
    }

    pub fn buffers(&self) -> &[NamedTensor] {
        &self.buffers
    }

    /// Mutable access to every tensor, for optimizers and checkpoint loading.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.params.iter_mut()
    }

    pub fn buffers_mut(&mut self) -> impl Iterator<Item = &mut NamedTensor> {
        self.buffers.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of learnable scalars.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Places every parameter on `g`, as trainable leaves or as constants.
    /// `training` selects batch statistics in batch-norm layers.
    pub fn bind(&self, g: &mut Graph, trainable: bool, training: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| g.leaf(p.tensor.clone(), trainable))
            .collect();
        Bound {
            vars,
            buffers: self.buffers.iter().map(|b| b.tensor.clone()).collect(),
            updated: vec![false; self.buffers.len()],
            training,
        }
    }

    /// Writes back running buffers a training-mode forward pass updated.
    pub fn commit(&mut self, bound: &Bound) {
        for (i, b) in self.buffers.iter_mut().enumerate() {
            if bound.updated[i] {
                b.tensor = bound.buffers[i].clone();
            }
        }
    }

    /// Rounds every parameter and buffer through `f32`.
    pub fn round_to_f32(&mut self) {
        for p in self.params.iter_mut().chain(self.buffers.iter_mut()) {
            p.tensor.round_to_f32();
        }
    }
}

/// A store's parameters placed on one graph, plus a working copy of its
/// running buffers.
#[derive(Debug)]
pub struct Bound {
    vars: Vec<Var>,
    buffers: Vec<Tensor>,
    updated: Vec<bool>,
    training: bool,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Makes the network read `var` in place of a parameter, e.g. to probe
    /// the gradient with respect to that parameter alone.
    pub fn replace(&mut self, id: ParamId, var: Var) {
        self.vars[id.0] = var;
    }

    pub fn training(&self) -> bool {
        self.training
    }

    pub fn buffer(&self, id: BufferId) -> &Tensor {
        &self.buffers[id.0]
    }

    pub fn set_buffer(&mut self, id: BufferId, t: Tensor) {
        self.buffers[id.0] = t;
        self.updated[id.0] = true;
    }

    /// Gradients of every parameter after `g.backward`; `None` where no
    /// gradient reached the parameter.
    pub fn gradients(&self, g: &Graph) -> Vec<Option<Tensor>> {
        self.vars.iter().map(|&v| g.grad(v).cloned()).collect()
    }
}
