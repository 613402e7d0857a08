//! Named parameter storage shared by init, training, and checkpointing.

use std::collections::BTreeMap;

use super::graph::{Graph, TensorRef};
use super::scalar::Scalar;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// A stored parameter tensor (values live outside any graph).
#[derive(Debug, Clone, PartialEq)]
pub struct Param<S: Scalar> {
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Name-keyed parameter set. BTreeMap keeps iteration order deterministic,
/// which checkpoint serialization and gradient merging rely on.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<S: Scalar> {
    map: BTreeMap<String, Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { map: BTreeMap::new() }
    }

    pub fn insert(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<S>) {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        self.map.insert(name.into(), Param { shape, data });
    }

    /// Gaussian init with the given std.
    pub fn insert_gaussian(&mut self, name: impl Into<String>, shape: Vec<usize>, std: f64, rng: &mut Rng) {
        let n: usize = shape.iter().product();
        let data: Vec<S> = (0..n).map(|_| S::from_f64(rng.gaussian() * std)).collect();
        self.insert(name, shape, data);
    }

    pub fn insert_zeros(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![S::ZERO; n]);
    }

    pub fn insert_ones(&mut self, name: impl Into<String>, shape: Vec<usize>) {
        let n: usize = shape.iter().product();
        self.insert(name, shape, vec![S::ONE; n]);
    }

    pub fn get(&self, name: &str) -> Result<&Param<S>> {
        self.map
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter tensor '{}'", name)))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<S>> {
        self.map
            .get_mut(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter tensor '{}'", name)))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<S>> {
        self.map.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Convert element type (used to run f32-trained weights in f64
    /// verification graphs).
    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, p) in self.iter() {
            out.insert(
                name,
                p.shape.clone(),
                p.data.iter().map(|&v| T::from_f64(v.to_f64())).collect(),
            );
        }
        out
    }
}

/// Parameters bound into a graph as leaves for one forward/backward pass.
pub struct BoundParams {
    refs: BTreeMap<String, TensorRef>,
}

impl BoundParams {
    /// Bind every parameter as a graph leaf. `trainable` decides per name
    /// whether the leaf requires gradients (frozen groups bind with
    /// requires_grad = false and therefore cannot change).
    pub fn bind<S: Scalar>(
        store: &ParamStore<S>,
        graph: &mut Graph<S>,
        mut trainable: impl FnMut(&str) -> bool,
    ) -> Result<Self> {
        let mut refs = BTreeMap::new();
        for (name, p) in store.iter() {
            let r = graph.leaf(p.data.clone(), p.shape.clone(), trainable(name))?;
            refs.insert(name.to_string(), r);
        }
        Ok(BoundParams { refs })
    }

    /// Wrap existing graph leaves (e.g. externally managed inputs of a
    /// gradient check) as a parameter view.
    pub fn from_refs(refs: BTreeMap<String, TensorRef>) -> Self {
        BoundParams { refs }
    }

    pub fn get(&self, name: &str) -> Result<TensorRef> {
        self.refs
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("parameter '{}' not bound in graph", name)))
    }

    /// Collect gradients for every bound parameter that received one.
    pub fn gradients<S: Scalar>(&self, graph: &Graph<S>) -> BTreeMap<String, Vec<S>> {
        let mut out = BTreeMap::new();
        for (name, &r) in &self.refs {
            if let Some(g) = graph.grad(r) {
                out.insert(name.clone(), g.to_vec());
            }
        }
        out
    }
}
