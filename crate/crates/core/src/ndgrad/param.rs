use std::collections::HashMap;

use sha2::{Digest, Sha256};

use super::array::DiffArray;
use crate::error::{Error, Result};

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub array: DiffArray,
    pub trainable: bool,
}

impl Parameter {
    pub fn numel(&self) -> usize {
        self.array.len()
    }
}

/// Registry of every named parameter of a model, in registration order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    by_name: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a trainable parameter. Names are dotted paths and must be unique.
    pub fn register(&mut self, name: impl Into<String>, array: DiffArray) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::Internal(format!("duplicate parameter name {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter { name, array: array.with_requires_grad(true), trainable: true });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Parameter> {
        self.id(name).map(|id| self.get(id))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_ids(&self) -> Vec<ParamId> {
        self.iter().filter(|(_, p)| p.trainable).map(|(id, _)| id).collect()
    }

    pub fn set_trainable(&mut self, id: ParamId, on: bool) {
        let p = &mut self.params[id.0];
        p.trainable = on;
        p.array = std::mem::replace(&mut p.array, DiffArray::scalar(0.0)).with_requires_grad(on);
    }

    /// Freezes or unfreezes every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, on: bool) -> usize {
        let ids: Vec<ParamId> =
            self.iter().filter(|(_, p)| p.name.starts_with(prefix)).map(|(id, _)| id).collect();
        for &id in &ids {
            self.set_trainable(id, on);
        }
        ids.len()
    }

    /// Overwrites a parameter's values, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[f64]) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.array.len() != values.len() {
            return Err(Error::config(format!(
                "{}: expected {} values, got {}",
                p.name,
                p.array.len(),
                values.len()
            )));
        }
        p.array.values_mut().copy_from_slice(values);
        Ok(())
    }

    pub fn fill(&mut self, id: ParamId, v: f64) {
        self.params[id.0].array.values_mut().fill(v);
    }

    /// SHA-256 over the little-endian value bytes of every parameter
    /// accepted by `filter`, in registration order.
    pub fn checksum(&self, filter: impl Fn(&Parameter) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| filter(p)) {
            h.update(p.name.as_bytes());
            h.update(p.array.to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    pub fn total_numel(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }
}
