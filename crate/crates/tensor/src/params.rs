use std::cell::RefCell;

use crate::{Array, Gradients, Graph, Scalar, Var};

/// Index of a parameter inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable arrays.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { names: Vec::new(), values: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array<T>) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter name {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Array<T> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array<T> {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.values.len()).map(ParamId)
    }

    /// Ids whose name starts with `prefix`.
    pub fn ids_with_prefix(&self, prefix: &str) -> Vec<ParamId> {
        self.ids().filter(|&id| self.names[id.0].starts_with(prefix)).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array<T>)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Array::len).sum()
    }

    pub fn num_scalars_with_prefix(&self, prefix: &str) -> usize {
        self.ids_with_prefix(prefix).iter().map(|&id| self.values[id.0].len()).sum()
    }
}

/// Binds a [`ParamStore`] onto a [`Graph`] for one forward/backward pass.
///
/// Each parameter becomes a single leaf the first time it is requested, so
/// gradients from every use accumulate on that leaf.
pub struct Session<'g, 's, T> {
    graph: &'g Graph<T>,
    store: &'s ParamStore<T>,
    bound: RefCell<Vec<Option<Var<'g, T>>>>,
    frozen: bool,
}

impl<'g, 's, T: Scalar> Session<'g, 's, T> {
    pub fn new(graph: &'g Graph<T>, store: &'s ParamStore<T>) -> Self {
        Self { graph, store, bound: RefCell::new(vec![None; store.len()]), frozen: false }
    }

    /// A view whose parameters are constants: nothing it computes sends
    /// gradient into the store.
    pub fn frozen(&self) -> Session<'g, 's, T> {
        Session { graph: self.graph, store: self.store, bound: RefCell::new(vec![None; self.store.len()]), frozen: true }
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn param(&self, id: ParamId) -> Var<'g, T> {
        if let Some(v) = self.bound.borrow()[id.0] {
            return v;
        }
        let value = self.store.get(id).clone();
        let v = if self.frozen { self.graph.constant(value) } else { self.graph.leaf(value) };
        self.bound.borrow_mut()[id.0] = Some(v);
        v
    }

    pub fn constant(&self, value: Array<T>) -> Var<'g, T> {
        self.graph.constant(value)
    }

    pub fn scalar(&self, v: f64) -> Var<'g, T> {
        self.graph.scalar(v)
    }

    /// Collects the gradient of every parameter this session bound.
    pub fn param_grads(&self, grads: &Gradients<T>) -> ParamGrads<T> {
        let bound = self.bound.borrow();
        let items = bound
            .iter()
            .map(|b| b.and_then(|v| grads.get_id(v.id).cloned()))
            .collect();
        ParamGrads { items }
    }
}

/// Per-parameter gradients, indexed like the store.
#[derive(Clone, Debug)]
pub struct ParamGrads<T> {
    items: Vec<Option<Array<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn get(&self, id: ParamId) -> Option<&Array<T>> {
        self.items.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn global_norm(&self) -> T {
        self.items
            .iter()
            .flatten()
            .map(|g| g.data().iter().map(|&x| x * x).sum::<T>())
            .sum::<T>()
            .sqrt()
    }

    pub fn all_finite(&self) -> bool {
        self.items.iter().flatten().all(Array::all_finite)
    }

    /// Rescales so the global norm is at most `max_norm`.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let norm = self.global_norm();
        let max = T::of(max_norm);
        if norm > max {
            let s = max / norm;
            for g in self.items.iter_mut().flatten() {
                for x in g.data_mut() {
                    *x *= s;
                }
            }
        }
    }

    pub fn accumulate(&mut self, other: &ParamGrads<T>) {
        if self.items.len() < other.items.len() {
            self.items.resize(other.items.len(), None);
        }
        for (mine, theirs) in self.items.iter_mut().zip(&other.items) {
            match (mine.as_mut(), theirs) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *mine = Some(b.clone()),
                _ => {}
            }
        }
    }
}
