//! Named parameter storage with matching gradient buffers and optimizer moments.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{NumError, Result};
use crate::tensor::Tensor;

/// Gradients keyed by parameter name.
pub type Gradients = BTreeMap<String, Tensor>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub first: BTreeMap<String, Tensor>,
    pub second: BTreeMap<String, Tensor>,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    grads: BTreeMap<String, Tensor>,
    pub(crate) adam: AdamState,
    seed: u64,
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(NumError::DuplicateParam(name));
        }
        self.grads.insert(name.clone(), Tensor::zeros(value.shape().to_vec()));
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    /// Replaces a parameter's values; the shape must not change.
    pub fn set(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .params
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(NumError::Shape {
                op: "ParamStore::set",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NumError::UnknownParam(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.grads
            .get(name)
            .ok_or_else(|| NumError::MissingGradient(name.to_string()))
    }

    pub fn grads(&self) -> &Gradients {
        &self.grads
    }

    pub fn zero_grad(&mut self) {
        for g in self.grads.values_mut() {
            g.data_mut().fill(0.0);
        }
    }

    /// Adds `scale * grads` into the gradient buffers. Unknown names are an error.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) -> Result<()> {
        for (name, g) in grads {
            let slot = self
                .grads
                .get_mut(name)
                .ok_or_else(|| NumError::UnknownParam(name.clone()))?;
            if slot.shape() != g.shape() {
                return Err(NumError::Shape {
                    op: "ParamStore::accumulate",
                    left: slot.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            slot.add_assign_scaled(g, scale);
        }
        Ok(())
    }

    pub fn set_grad(&mut self, name: &str, value: Tensor) -> Result<()> {
        let slot = self
            .grads
            .get_mut(name)
            .ok_or_else(|| NumError::MissingGradient(name.to_string()))?;
        if slot.shape() != value.shape() {
            return Err(NumError::Shape {
                op: "ParamStore::set_grad",
                left: slot.shape().to_vec(),
                right: value.shape().to_vec(),
            });
        }
        *slot = value;
        Ok(())
    }

    pub fn adam_state(&self) -> &AdamState {
        &self.adam
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::default();
    }

    /// SHA-256 over names, shapes and little-endian values of one parameter.
    pub fn param_checksum(&self, name: &str) -> Result<String> {
        let t = self.get(name)?;
        let mut h = Sha256::new();
        hash_tensor(&mut h, name, t);
        Ok(hex_digest(h))
    }

    /// SHA-256 over every parameter in name order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for (name, t) in &self.params {
            hash_tensor(&mut h, name, t);
        }
        hex_digest(h)
    }
}

fn hash_tensor(h: &mut Sha256, name: &str, t: &Tensor) {
    h.update((name.len() as u64).to_le_bytes());
    h.update(name.as_bytes());
    for &d in t.shape() {
        h.update((d as u64).to_le_bytes());
    }
    for v in t.data() {
        h.update(v.to_le_bytes());
    }
}

fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}
