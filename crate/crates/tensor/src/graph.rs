use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use crate::{Array, Scalar};

/// Maps the gradient of a node's output to gradients of each of its parents
/// (in parent order). `None` means "no contribution".
pub type BackwardFn<T> = Box<dyn Fn(&Array<T>) -> Vec<Option<Array<T>>>>;

struct Node<T> {
    value: Rc<Array<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Append-only tape. Node ids are creation order, so reverse id order is a
/// valid reverse topological order.
pub struct Graph<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf that receives a gradient.
    pub fn leaf(&self, value: Array<T>) -> Var<'_, T> {
        self.push_node(Rc::new(value), Vec::new(), None, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Array<T>) -> Var<'_, T> {
        self.push_node(Rc::new(value), Vec::new(), None, false)
    }

    pub fn constant_rc(&self, value: Rc<Array<T>>) -> Var<'_, T> {
        self.push_node(value, Vec::new(), None, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_, T> {
        self.constant(Array::scalar(T::of(v)))
    }

    /// Records a custom differentiable operation. `backward` receives the
    /// output gradient and returns one optional gradient per parent.
    pub fn custom<'g>(
        &'g self,
        value: Array<T>,
        parents: &[Var<'g, T>],
        backward: impl Fn(&Array<T>) -> Vec<Option<Array<T>>> + 'static,
    ) -> Var<'g, T> {
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let requires_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].requires_grad)
        };
        let bw: Option<BackwardFn<T>> = if requires_grad { Some(Box::new(backward)) } else { None };
        self.push_node(Rc::new(value), ids, bw, requires_grad)
    }

    fn push_node(
        &self,
        value: Rc<Array<T>>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward, requires_grad });
        Var { graph: self, id: nodes.len() - 1 }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Array<T>> {
        self.nodes.borrow()[id].value.clone()
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, output: Var<'_, T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let out = &nodes[output.id];
        assert_eq!(out.value.len(), 1, "backward() needs a single-element output");
        let mut grads: Vec<Option<Array<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[output.id] = Some(Array::ones(out.value.shape()));
        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(bw) = node.backward.as_ref() else { continue };
            let Some(g) = grads[id].take() else { continue };
            let parent_grads = bw(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&pid, pg) in node.parents.iter().zip(parent_grads) {
                let Some(pg) = pg else { continue };
                if !nodes[pid].requires_grad {
                    continue;
                }
                debug_assert_eq!(pg.shape(), nodes[pid].value.shape(), "gradient shape for node {pid}");
                match &mut grads[pid] {
                    Some(acc) => acc.add_assign(&pg),
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        // Leaves keep their gradient; interior nodes were consumed above.
        for (id, node) in nodes.iter().enumerate() {
            if !node.parents.is_empty() {
                grads[id] = None;
            }
        }
        Gradients { grads }
    }
}

/// Gradients of leaf nodes after a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Array<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&Array<T>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    pub(crate) fn get_id(&self, id: usize) -> Option<&Array<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros when nothing flowed into it.
    pub fn wrt(&self, v: Var<'_, T>) -> Array<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => Array::zeros(v.value().shape()),
        }
    }
}

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T> {
    pub(crate) graph: &'g Graph<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}, shape={:?})", self.id, self.value().shape())
    }
}

impl<'g, T: Scalar> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Array<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn item(&self) -> T {
        self.value().item()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.requires_grad(self.id)
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        self.graph.constant_rc(self.value())
    }

    pub(crate) fn op(
        &self,
        value: Array<T>,
        parents: &[Var<'g, T>],
        backward: impl Fn(&Array<T>) -> Vec<Option<Array<T>>> + 'static,
    ) -> Var<'g, T> {
        self.graph.custom(value, parents, backward)
    }
}
