//! Bridge between a [`ParamStore`] and a [`GradientSession`].
//!
//! A [`ModelGraph`] lazily registers parameters into a session on first use:
//! trainable parameters become watched leaves, frozen ones become constants,
//! so their gradients are never materialized. Individual bindings can be
//! overridden with pre-existing session values, which is how the
//! finite-difference oracle steers a single parameter at a time.

use std::collections::HashMap;

use crate::autodiff::{GradientSession, Gradients, ValueId};
use crate::error::Result;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

pub struct ModelGraph<'s, 'p, S: Scalar> {
    pub session: &'s mut GradientSession<S>,
    store: &'p ParamStore<S>,
    bound: HashMap<String, ValueId>,
    train: bool,
}

impl<'s, 'p, S: Scalar> ModelGraph<'s, 'p, S> {
    /// Graph where trainable parameters are watched.
    pub fn training(session: &'s mut GradientSession<S>, store: &'p ParamStore<S>) -> Self {
        ModelGraph {
            session,
            store,
            bound: HashMap::new(),
            train: true,
        }
    }

    /// Graph where every parameter binds as a constant.
    pub fn inference(session: &'s mut GradientSession<S>, store: &'p ParamStore<S>) -> Self {
        ModelGraph {
            session,
            store,
            bound: HashMap::new(),
            train: false,
        }
    }

    pub fn store(&self) -> &ParamStore<S> {
        self.store
    }

    /// Pre-binds a parameter name to an existing session value; subsequent
    /// `param` calls return it instead of the stored tensor.
    pub fn bind(&mut self, name: &str, id: ValueId) {
        self.bound.insert(name.to_string(), id);
    }

    /// Binds (or reuses) the parameter with this name.
    pub fn param(&mut self, name: &str) -> Result<ValueId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let entry = self.store.entry(name)?;
        let id = if self.train && entry.trainable {
            self.session.leaf(entry.tensor.clone())
        } else {
            self.session.constant(entry.tensor.clone())
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Registers an input or other non-parameter tensor.
    pub fn input(&mut self, t: TensorBase<S>) -> ValueId {
        self.session.constant(t)
    }

    /// Gradient of a bound parameter from a backward pass over this graph,
    /// `None` when the parameter is frozen or was never used.
    pub fn grad_of<'g>(&self, grads: &'g Gradients<S>, name: &str) -> Option<&'g TensorBase<S>> {
        self.bound.get(name).and_then(|&id| grads.get(id))
    }
}
