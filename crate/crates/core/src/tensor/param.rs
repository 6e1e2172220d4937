//! Named persistent parameters.

use std::collections::HashMap;

use super::{Tape, Tensor, Value};
use crate::{HinError, Result};

/// A named tensor that persists across tapes. Gradient accumulation happens
/// in `tensor.grad`.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of uniquely named parameters. Order is stable and
/// defines the layout of checkpoints and optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    items: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<usize> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(HinError::invalid("parameter", format!("duplicate name `{name}`")));
        }
        let id = self.items.len();
        self.index.insert(name.clone(), id);
        self.items.push(Parameter { name, tensor });
        Ok(id)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, id: usize) -> &Parameter {
        &self.items[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Parameter {
        &mut self.items[id]
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.items.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter> {
        self.items.iter_mut()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.items {
            p.tensor.zero_grad();
        }
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.items.iter().map(|p| p.tensor.len()).sum()
    }

    /// Register every parameter as a leaf on `tape`, in set order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Value> {
        self.items.iter().map(|p| tape.leaf(p.tensor.clone())).collect()
    }

    /// Pull tape gradients for bound values back into the persistent
    /// accumulators. Parameters the loss never touched accumulate zero.
    pub fn accumulate_from_tape(&mut self, tape: &Tape, bound: &[Value]) {
        debug_assert_eq!(bound.len(), self.items.len());
        for (p, v) in self.items.iter_mut().zip(bound) {
            if p.tensor.requires_grad {
                let g = tape.grad_or_zeros(*v);
                p.tensor.accumulate_grad(&g);
            }
        }
    }

    /// Collect per-parameter gradients from a tape without touching the set,
    /// for deterministic merging of work done in parallel.
    pub fn collect_from_tape(&self, tape: &Tape, bound: &[Value]) -> Vec<Option<Vec<f64>>> {
        debug_assert_eq!(bound.len(), self.items.len());
        self.items
            .iter()
            .zip(bound)
            .map(|(p, v)| {
                if p.tensor.requires_grad {
                    Some(tape.grad_or_zeros(*v))
                } else {
                    None
                }
            })
            .collect()
    }

    /// Merge gradients produced by [`collect_from_tape`].
    pub fn accumulate(&mut self, grads: &[Option<Vec<f64>>]) {
        debug_assert_eq!(grads.len(), self.items.len());
        for (p, g) in self.items.iter_mut().zip(grads) {
            if let Some(g) = g {
                p.tensor.accumulate_grad(g);
            }
        }
    }
}
