//! Named parameter storage with deterministic iteration order.
//!
//! Registration order is the canonical order for checkpoints, gradient
//! accumulation and optimizer state, so fixed seeds give bitwise-identical
//! runs.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<(String, Tensor)>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn register(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Config(format!("parameter '{name}' registered twice")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        let idx = self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        Ok(&self.entries[*idx].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        let idx = self
            .index
            .get(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))?;
        Ok(&mut self.entries[*idx].1)
    }

    /// Replace a parameter's values; the shape must match.
    pub fn set(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        let current = self.get_mut(name)?;
        if current.shape() != tensor.shape() {
            return Err(Error::Shape(format!(
                "parameter '{name}' has shape {:?}, replacement has {:?}",
                current.shape(),
                tensor.shape()
            )));
        }
        *current = tensor;
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    /// Entries in registration order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }
}

/// Xavier-uniform sample over [rows, cols]: U(-a, a) with
/// a = sqrt(6 / (rows + cols)).
pub fn xavier_uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let values = (0..rows * cols).map(|_| rng.gen_range(-a..a)).collect();
    Tensor::new(vec![rows, cols], values).expect("finite by construction")
}
