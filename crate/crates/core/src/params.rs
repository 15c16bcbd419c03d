//! Named storage for trainable tensors.
//!
//! Model structs hold [`ParamId`] handles; the values live in
//! [`ModelParams`]. Binding the store onto a tape yields a [`Bound`] view
//! that maps each handle to its tape variable, so forward code never copies
//! parameter data (leaves share the store's `Arc`s).

use std::ops::Index;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Every trainable weight of the pipeline, in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Arc<Tensor>>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(Arc::new(value));
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar weights.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|t| t.numel()).sum()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.values[id.0])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.values[i].as_ref())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.values.iter().map(Arc::as_ref))
    }

    pub fn tensors(&self) -> Vec<Tensor> {
        self.values.iter().map(|t| t.as_ref().clone()).collect()
    }

    /// Replaces every value, keeping names. Shapes must match.
    pub fn set_all(&mut self, values: Vec<Tensor>) {
        assert_eq!(values.len(), self.values.len());
        for (slot, v) in self.values.iter_mut().zip(values) {
            assert_eq!(slot.shape(), v.shape());
            *slot = Arc::new(v);
        }
    }

    /// Records every parameter as a tape leaf.
    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        Bound {
            vars: self
                .values
                .iter()
                .map(|v| tape.leaf(Arc::clone(v), requires_grad))
                .collect(),
        }
    }
}

/// Tape variables for a bound [`ModelParams`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wraps variables that were bound in [`ModelParams`] order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

/// Registers freshly initialized parameters.
pub(crate) struct ParamBuilder<'a> {
    pub store: &'a mut ModelParams,
    pub rng: &'a mut ChaCha8Rng,
}

impl ParamBuilder<'_> {
    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`
    pub fn uniform(&mut self, name: String, shape: &[usize], fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = (0..n).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn normal(&mut self, name: String, shape: &[usize], std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("positive std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| dist.sample(self.rng)).collect();
        self.store.add(name, Tensor::from_parts(shape.to_vec(), data))
    }

    pub fn constant(&mut self, name: String, shape: &[usize], value: f64) -> ParamId {
        let n = shape.iter().product();
        self.store
            .add(name, Tensor::from_parts(shape.to_vec(), vec![value; n]))
    }
}
