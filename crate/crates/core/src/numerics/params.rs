use std::cell::RefCell;
use std::collections::HashMap;

use indexmap::IndexMap;

use super::tape::{Gradients, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameter tensors in a fixed insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    /// Binds these parameters to a tape. Parameters are registered lazily,
    /// so only those a forward pass actually reads appear on the tape.
    pub fn bind<'a>(&'a self, tape: &'a Tape) -> Binder<'a> {
        Binder {
            store: self,
            tape,
            bound: RefCell::new(HashMap::new()),
        }
    }

    /// Gradients for every stored parameter, zero-filled for parameters the
    /// tape never saw.
    pub fn complete(&self, mut partial: Gradients) -> Gradients {
        self.tensors
            .iter()
            .map(|(name, t)| {
                let g = partial
                    .swap_remove(name)
                    .unwrap_or_else(|| Tensor::zeros(t.shape()));
                (name.clone(), g)
            })
            .collect()
    }
}

/// Lazily registers [`ParamStore`] entries as tape parameters.
pub struct Binder<'a> {
    store: &'a ParamStore,
    tape: &'a Tape,
    bound: RefCell<HashMap<String, Var>>,
}

impl<'a> Binder<'a> {
    pub fn tape(&self) -> &'a Tape {
        self.tape
    }

    /// The stored value of a parameter, without registering it on the tape.
    pub fn peek(&self, name: &str) -> Option<&'a Tensor> {
        self.store.get(name)
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.borrow().get(name) {
            return Ok(*v);
        }
        let value = self
            .store
            .get(name)
            .ok_or_else(|| Error::Contract(format!("missing parameter `{name}`")))?;
        let v = self.tape.param(name, value.clone());
        self.bound.borrow_mut().insert(name.to_string(), v);
        Ok(v)
    }

    /// Variables of every parameter read so far, in registration order.
    pub fn active(&self) -> Vec<Var> {
        self.tape.params().into_iter().map(|(_, v)| v).collect()
    }

    /// Gradients of `loss` for the whole store.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        Ok(self.store.complete(self.tape.backward(loss)?))
    }
}
