//! Named parameter storage.
//!
//! A [`ParamStore`] is the single source of truth for model parameters:
//! an ordered list of `(name, tensor, trainable, group)` entries. Insertion
//! order is deterministic and drives checkpoint layout, optimizer layout and
//! the flat coordinate space used by the selective fine-tuning mask.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::TensorBase;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Patch embedding (weights and bias).
    Embedding,
    /// Transformer trunk; the selective mask operates on this group.
    Backbone,
    /// Prediction head.
    Head,
    /// Dynamic prompt generator.
    Tadp,
    /// Auxiliary fine-tuning modules (low-rank adapters, scale/shift, ...).
    Aux,
}

impl ParamGroup {
    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Embedding => "embedding",
            ParamGroup::Backbone => "backbone",
            ParamGroup::Head => "head",
            ParamGroup::Tadp => "tadp",
            ParamGroup::Aux => "aux",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub tensor: TensorBase<S>,
    pub trainable: bool,
    pub group: ParamGroup,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
    index: HashMap<String, usize>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    /// Appends a parameter; names must be unique.
    pub fn insert(
        &mut self,
        name: impl Into<String>,
        group: ParamGroup,
        tensor: TensorBase<S>,
    ) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry {
            name,
            tensor,
            trainable: true,
            group,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<S>] {
        &self.entries
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn entry(&self, name: &str) -> Result<&ParamEntry<S>> {
        self.index
            .get(name)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&TensorBase<S>> {
        self.entry(name).map(|e| &e.tensor)
    }

    /// Replaces a parameter value; the shape must stay fixed.
    pub fn set_tensor(&mut self, name: &str, tensor: TensorBase<S>) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        if self.entries[i].tensor.shape() != tensor.shape() {
            return Err(Error::shape(
                "set_tensor",
                format!("{:?}", self.entries[i].tensor.shape()),
                format!("{:?}", tensor.shape()),
            ));
        }
        self.entries[i].tensor = tensor;
        Ok(())
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let i = *self
            .index
            .get(name)
            .ok_or_else(|| Error::contract(format!("unknown parameter {name}")))?;
        self.entries[i].trainable = trainable;
        Ok(())
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for e in &mut self.entries {
            e.trainable = trainable;
        }
    }

    pub fn set_group_trainable(&mut self, group: ParamGroup, trainable: bool) {
        for e in &mut self.entries {
            if e.group == group {
                e.trainable = trainable;
            }
        }
    }

    /// Total number of scalar coordinates in a group.
    pub fn group_size(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Number of trainable scalar coordinates in a group.
    pub fn trainable_size(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group && e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }

    pub fn trainable_total(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.trainable)
            .map(|e| e.tensor.numel())
            .sum()
    }
}

/// Flat coordinate layout over a fixed list of parameters, in store order.
#[derive(Debug, Clone)]
pub struct FlatLayout {
    names: Vec<String>,
    offsets: Vec<usize>,
    total: usize,
}

impl FlatLayout {
    pub fn of_group<S: Scalar>(store: &ParamStore<S>, group: ParamGroup) -> Self {
        Self::of_names(
            store,
            store
                .entries()
                .iter()
                .filter(|e| e.group == group)
                .map(|e| e.name.clone()),
        )
    }

    pub fn of_trainable<S: Scalar>(store: &ParamStore<S>) -> Self {
        Self::of_names(
            store,
            store
                .entries()
                .iter()
                .filter(|e| e.trainable)
                .map(|e| e.name.clone()),
        )
    }

    fn of_names<S: Scalar>(store: &ParamStore<S>, names: impl Iterator<Item = String>) -> Self {
        let mut layout = FlatLayout {
            names: Vec::new(),
            offsets: Vec::new(),
            total: 0,
        };
        for name in names {
            let n = store
                .tensor(&name)
                .expect("layout names come from the store")
                .numel();
            layout.offsets.push(layout.total);
            layout.names.push(name);
            layout.total += n;
        }
        layout
    }

    pub fn total(&self) -> usize {
        self.total
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `(name, start, end)` for every parameter in the layout.
    pub fn spans(&self) -> impl Iterator<Item = (&str, usize, usize)> + '_ {
        (0..self.names.len()).map(move |i| {
            let end = if i + 1 < self.offsets.len() {
                self.offsets[i + 1]
            } else {
                self.total
            };
            (self.names[i].as_str(), self.offsets[i], end)
        })
    }

    /// Copies parameter values into one flat vector.
    pub fn flatten<S: Scalar>(&self, store: &ParamStore<S>) -> Vec<S> {
        let mut out = Vec::with_capacity(self.total);
        for name in &self.names {
            out.extend_from_slice(store.tensor(name).expect("layout name").data());
        }
        out
    }

    /// Writes a flat vector back into the store.
    pub fn unflatten<S: Scalar>(&self, store: &mut ParamStore<S>, flat: &[S]) -> Result<()> {
        if flat.len() != self.total {
            return Err(Error::shape(
                "unflatten",
                format!("{} coordinates", self.total),
                format!("{}", flat.len()),
            ));
        }
        for (name, start, end) in self.spans() {
            let shape = store.tensor(name)?.shape().to_vec();
            let t = TensorBase::from_op(shape, flat[start..end].to_vec());
            store.set_tensor(name, t)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type T = TensorBase<f64>;

    fn store() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("embed.weight", ParamGroup::Embedding, T::ones(&[2, 3]))
            .unwrap();
        s.insert("blocks.0.w", ParamGroup::Backbone, T::zeros(&[4]))
            .unwrap();
        s.insert("head.weight", ParamGroup::Head, T::ones(&[3]))
            .unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(s
            .insert("embed.weight", ParamGroup::Embedding, T::ones(&[1]))
            .is_err());
    }

    #[test]
    fn order_is_insertion_order() {
        let s = store();
        let names: Vec<&str> = s.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["embed.weight", "blocks.0.w", "head.weight"]);
    }

    #[test]
    fn group_counts() {
        let mut s = store();
        assert_eq!(s.group_size(ParamGroup::Backbone), 4);
        assert_eq!(s.trainable_total(), 13);
        s.set_group_trainable(ParamGroup::Backbone, false);
        assert_eq!(s.trainable_size(ParamGroup::Backbone), 0);
        assert_eq!(s.trainable_total(), 9);
    }

    #[test]
    fn set_tensor_enforces_shape() {
        let mut s = store();
        assert!(s.set_tensor("blocks.0.w", T::zeros(&[5])).is_err());
        s.set_tensor("blocks.0.w", T::ones(&[4])).unwrap();
        assert_eq!(s.tensor("blocks.0.w").unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn flat_round_trip() {
        let mut s = store();
        let layout = FlatLayout::of_group(&s, ParamGroup::Backbone);
        assert_eq!(layout.total(), 4);
        let mut flat = layout.flatten(&s);
        flat[2] = 9.0;
        layout.unflatten(&mut s, &flat).unwrap();
        assert_eq!(s.tensor("blocks.0.w").unwrap().data(), &[0.0, 0.0, 9.0, 0.0]);
        assert!(layout.unflatten(&mut s, &[0.0; 3]).is_err());
    }

    #[test]
    fn spans_cover_layout() {
        let s = store();
        let layout = FlatLayout::of_trainable(&s);
        let spans: Vec<(String, usize, usize)> = layout
            .spans()
            .map(|(n, a, b)| (n.to_string(), a, b))
            .collect();
        assert_eq!(spans[0], ("embed.weight".to_string(), 0, 6));
        assert_eq!(spans[1], ("blocks.0.w".to_string(), 6, 10));
        assert_eq!(spans[2], ("head.weight".to_string(), 10, 13));
    }
}
