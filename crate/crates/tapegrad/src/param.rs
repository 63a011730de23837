//! Named parameter tensors and their binding onto a tape.

use indexmap::IndexMap;
use ndarray::ArrayD;

use crate::tape::{Gradients, Tape, Var};

/// An ordered collection of named parameter tensors.
///
/// Iteration order is insertion order, which keeps serialization and
/// optimizer state stable across runs.
#[derive(Default, Clone)]
pub struct ParamStore {
    entries: IndexMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a parameter. Panics on duplicate names; each parameter is
    /// owned by exactly one module.
    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        let prior = self.entries.insert(name.clone(), value);
        assert!(prior.is_none(), "duplicate parameter name {name:?}");
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.entries.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ArrayD<f64>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    /// Total number of scalar elements across all parameters.
    pub fn num_elements(&self) -> usize {
        self.entries.values().map(|v| v.len()).sum()
    }

    /// Push every parameter onto `tape` as a leaf and record the handles.
    pub fn bind(&self, tape: &mut Tape) -> BoundParams {
        let vars = self
            .entries
            .iter()
            .map(|(name, value)| (name.clone(), tape.leaf(value.clone())))
            .collect();
        BoundParams { vars }
    }
}

/// Tape handles for one binding of a [`ParamStore`].
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Handle for `name`. Panics if the store never held it; parameter names
    /// are static strings fixed at model construction.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter name {name:?}"))
    }

    pub fn try_var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> + '_ {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Collect gradients per parameter, zero-filled where the loss did not
    /// touch the parameter. Shapes mirror `store`.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> IndexMap<String, ArrayD<f64>> {
        self.vars
            .iter()
            .map(|(name, &var)| (name.clone(), grads.wrt_or_zeros(tape, var)))
            .collect()
    }
}
