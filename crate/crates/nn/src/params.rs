//! Named parameter storage and gradient accumulation.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;
use crate::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Trainable weights receive gradients; buffers (batch-norm running statistics)
/// are updated in place by the forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Buffer,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    kinds: Vec<ParamKind>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.kinds.push(kind);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Kaiming-normal (fan-in, ReLU gain) weights of the given shape.
    pub fn kaiming<R: Rng>(&mut self, name: impl Into<String>, shape: Vec<usize>, rng: &mut R) -> ParamId {
        let fan_in: usize = shape[1..].iter().product();
        let std = (2.0 / fan_in.max(1) as f32).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let n = shape.iter().product();
        let data = (0..n).map(|_| normal.sample(rng)).collect();
        self.add(name, ParamKind::Weight, Tensor::new(shape, data))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) -> ParamId {
        self.add(name, ParamKind::Weight, Tensor::zeros(shape))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.kinds[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Number of trainable scalars.
    pub fn n_trainable(&self) -> usize {
        self.ids()
            .filter(|&id| self.kind(id) == ParamKind::Weight)
            .map(|id| self.get(id).len())
            .sum()
    }

    /// Replaces a value by name, checking the shape.
    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<(), NnError> {
        let id = self.find(name).ok_or_else(|| NnError::UnknownParam(name.to_string()))?;
        if self.values[id.0].shape != value.shape {
            return Err(NnError::Shape(format!(
                "{name}: stored {:?}, given {:?}",
                self.values[id.0].shape, value.shape
            )));
        }
        self.values[id.0] = value;
        Ok(())
    }
}

/// Gradients by parameter, allocated on first write.
#[derive(Debug, Clone, Default)]
pub struct GradStore {
    grads: Vec<Option<Vec<f32>>>,
}

impl GradStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f32]) {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        match &mut self.grads[id.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut [f32] {
        if self.grads.len() <= id.0 {
            self.grads.resize(id.0 + 1, None);
        }
        self.grads[id.0].get_or_insert_with(|| vec![0.0; len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[f32]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn clear(&mut self) {
        self.grads.clear();
    }

    pub fn is_empty(&self) -> bool {
        self.grads.iter().all(|g| g.is_none())
    }
}
