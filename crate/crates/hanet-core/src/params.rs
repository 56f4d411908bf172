//! Named parameter storage shared by layers, the optimizer, and checkpoints.
//!
//! Entries keep their creation order, which makes checkpoint layout and
//! optimizer iteration deterministic. Batch-norm running statistics live here
//! too, as non-trainable entries, so serialization treats every piece of
//! model state uniformly.

use std::collections::HashMap;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub trainable: bool,
}

#[derive(Debug, Default)]
pub struct ParamStore {
    entries: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid("param_store", format!("duplicate parameter name '{name}'")));
        }
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.clone(), id);
        self.entries.push(Parameter { name, value, grad: None, trainable });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.entries[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    /// Entries in creation order.
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + use<> {
        (0..self.entries.len()).map(ParamId)
    }

    /// Adds `grad` into the parameter's gradient slot.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) -> Result<()> {
        let p = &mut self.entries[id.0];
        match &mut p.grad {
            Some(g) => g.add_assign(grad),
            slot @ None => {
                *slot = Some(grad.clone());
                Ok(())
            }
        }
    }

    /// Clears all gradients back to the unset state.
    pub fn zero_grads(&mut self) {
        for p in &mut self.entries {
            p.grad = None;
        }
    }

    pub fn trainable_count(&self) -> usize {
        self.entries.iter().filter(|p| p.trainable).count()
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }
}

/// Weight initializers. Every trainable tensor is drawn or set here so init
/// order (and therefore the RNG stream) is fixed by construction order.
pub struct Init<'r> {
    rng: &'r mut rand_chacha::ChaCha8Rng,
    normal: Normal<f64>,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut rand_chacha::ChaCha8Rng, std: f64) -> Result<Self> {
        let normal = Normal::new(0.0, std)
            .map_err(|e| Error::invalid("init", format!("bad std {std}: {e}")))?;
        Ok(Init { rng, normal })
    }

    /// Zero-mean Gaussian weights.
    pub fn normal(&mut self, shape: Shape) -> Tensor {
        let data = (0..shape.numel()).map(|_| self.normal.sample(self.rng)).collect();
        Tensor { shape, data }
    }

    pub fn constant(&mut self, shape: Shape, v: f64) -> Tensor {
        Tensor::filled(shape, v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::scalar(1.0), true).unwrap();
        assert!(s.insert("w", Tensor::scalar(2.0), true).is_err());
    }

    #[test]
    fn grads_accumulate_and_zero() {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(1.0), true).unwrap();
        assert!(s.get(id).grad.is_none());
        s.accumulate_grad(id, &Tensor::scalar(2.0)).unwrap();
        s.accumulate_grad(id, &Tensor::scalar(3.0)).unwrap();
        assert_eq!(s.get(id).grad.as_ref().unwrap().data[0], 5.0);
        s.zero_grads();
        assert!(s.get(id).grad.is_none());
    }
}
