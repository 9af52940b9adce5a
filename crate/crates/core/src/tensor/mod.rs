//! Dense tensors with reverse-mode autodiff on an eager dynamic graph.
//!
//! Every op builds its output value immediately and, when any input requires
//! gradients, attaches a node holding the parent tensors plus a backward
//! closure. `backward` on a scalar builds a [`GradientTape`] (topological
//! order) and replays it in reverse.
//!
//! Gradient lifecycle: leaf gradients accumulate across backward calls until
//! `zero_grad`; interior-node gradients are reset at the start of every
//! replay. Leaves with `requires_grad = false` never materialize a gradient
//! buffer. Shape violations are programming errors and panic.

use std::cell::{Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::scalar::Scalar;

mod ops;
pub mod shape;

pub use ops::{cross_entropy_masked, mse};
use shape::numel;

pub(crate) type BackFn<S> = Box<dyn Fn(&[S], &[Tensor<S>])>;

pub(crate) struct Node<S: Scalar> {
    parents: Vec<Tensor<S>>,
    backward: BackFn<S>,
}

struct Inner<S: Scalar> {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<S>>,
    grad: RefCell<Option<Vec<S>>>,
    requires_grad: bool,
    node: Option<Node<S>>,
}

/// Reference-counted handle to one graph node; cloning aliases storage.
pub struct Tensor<S: Scalar> {
    inner: Rc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Counters from one tape replay, for asserting traversal invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackwardReport {
    /// Tensors in the reachable requires-grad subgraph, leaves included.
    pub graph_size: usize,
    /// Backward closures executed during the replay.
    pub ops_visited: usize,
    /// Max executions of any single closure; 1 on a well-formed graph.
    pub max_visits_per_node: usize,
}

impl<S: Scalar> Tensor<S> {
    fn build(shape: Vec<usize>, values: Vec<S>, requires_grad: bool, node: Option<Node<S>>) -> Self {
        assert_eq!(
            numel(&shape),
            values.len(),
            "shape {:?} wants {} values, got {}",
            shape,
            numel(&shape),
            values.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                node,
            }),
        }
    }

    /// Leaf that does not take gradients (inputs, masks, detached values).
    pub fn constant(shape: Vec<usize>, values: Vec<S>) -> Self {
        Tensor::build(shape, values, false, None)
    }

    /// Trainable leaf.
    pub fn parameter(shape: Vec<usize>, values: Vec<S>) -> Self {
        Tensor::build(shape, values, true, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::constant(shape.to_vec(), vec![S::zero(); numel(shape)])
    }

    pub fn scalar(v: S) -> Self {
        Tensor::constant(vec![], vec![v])
    }

    pub fn eye(n: usize) -> Self {
        let mut vals = vec![S::zero(); n * n];
        for i in 0..n {
            vals[i * n + i] = S::one();
        }
        Tensor::constant(vec![n, n], vals)
    }

    /// Op output: attaches a graph node only when some parent needs grads,
    /// so inference-only subgraphs are pruned as they are built. The
    /// closure builder receives the freshly computed output values (for ops
    /// like softmax whose gradient reuses the output).
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<S>,
        parents: Vec<Tensor<S>>,
        make_back: impl FnOnce(&[S]) -> BackFn<S>,
    ) -> Self {
        let requires = parents.iter().any(|p| p.requires_grad());
        if requires {
            let backward = make_back(&values);
            Tensor::build(shape, values, true, Some(Node { parents, backward }))
        } else {
            Tensor::build(shape, values, false, None)
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.inner.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub fn values(&self) -> Ref<'_, Vec<S>> {
        self.inner.values.borrow()
    }

    pub fn value_vec(&self) -> Vec<S> {
        self.inner.values.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.len(), 1, "item() on tensor of shape {:?}", self.shape());
        self.inner.values.borrow()[0]
    }

    /// Overwrite stored values (optimizer steps, checkpoint restore). Only
    /// meaningful on leaves between training steps; mutating an interior
    /// node invalidates gradients of any live graph through it.
    pub fn set_values(&self, new: &[S]) {
        let mut v = self.inner.values.borrow_mut();
        assert_eq!(v.len(), new.len(), "set_values length mismatch on shape {:?}", self.shape());
        v.copy_from_slice(new);
    }

    /// In-place update of stored values under the same caveat as `set_values`.
    pub fn update_values(&self, f: impl FnOnce(&mut [S])) {
        f(&mut self.inner.values.borrow_mut());
    }

    pub fn grad_vec(&self) -> Option<Vec<S>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Accumulate into this tensor's gradient buffer, creating it zeroed on
    /// first use. No-op unless `requires_grad`.
    pub(crate) fn with_grad_buf(&self, f: impl FnOnce(&mut [S])) {
        if !self.inner.requires_grad {
            return;
        }
        let mut gopt = self.inner.grad.borrow_mut();
        let buf = gopt.get_or_insert_with(|| vec![S::zero(); self.len()]);
        f(buf);
    }

    /// Reverse-mode pass from a scalar loss; see [`GradientTape`].
    pub fn backward(&self) -> BackwardReport {
        GradientTape::for_root(self).replay()
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let vals = self.values();
        let head: Vec<String> = vals.iter().take(6).map(|v| format!("{v}")).collect();
        write!(
            f,
            "Tensor{{shape: {:?}, requires_grad: {}, values: [{}{}]}}",
            self.shape(),
            self.requires_grad(),
            head.join(", "),
            if vals.len() > 6 { ", .." } else { "" }
        )
    }
}

/// Topologically ordered view of the requires-grad subgraph under one root,
/// parents before consumers. Replaying the tape in reverse accumulates
/// gradients: interior grads are reset per replay, leaf grads accumulate
/// across replays (so two replays double the leaf gradients).
pub struct GradientTape<S: Scalar> {
    order: Vec<Tensor<S>>,
    pub seed: S,
}

impl<S: Scalar> GradientTape<S> {
    pub fn for_root(root: &Tensor<S>) -> GradientTape<S> {
        assert_eq!(root.len(), 1, "backward requires a scalar loss, got shape {:?}", root.shape());
        let mut order = Vec::new();
        if root.requires_grad() {
            let mut visited = HashSet::new();
            let mut stack: Vec<(Tensor<S>, usize)> = vec![(root.clone(), 0)];
            visited.insert(root.id());
            while let Some((t, pi)) = stack.last_mut() {
                let parent = t
                    .inner
                    .node
                    .as_ref()
                    .and_then(|n| n.parents.get(*pi))
                    .cloned();
                match parent {
                    Some(p) => {
                        *pi += 1;
                        if p.requires_grad() && visited.insert(p.id()) {
                            stack.push((p, 0));
                        }
                    }
                    None => {
                        let (t, _) = stack.pop().expect("stack nonempty");
                        order.push(t);
                    }
                }
            }
        }
        GradientTape { order, seed: S::one() }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn replay(&self) -> BackwardReport {
        // Fresh buffers for interior nodes; leaves keep accumulating.
        for t in &self.order {
            if t.inner.node.is_some() {
                *t.inner.grad.borrow_mut() = Some(vec![S::zero(); t.len()]);
            }
        }
        if let Some(root) = self.order.last() {
            let seed = self.seed;
            root.with_grad_buf(|g| g[0] = g[0] + seed);
        }
        let mut visits: HashMap<u64, usize> = HashMap::new();
        let mut ops_visited = 0;
        for t in self.order.iter().rev() {
            if let Some(node) = &t.inner.node {
                *visits.entry(t.id()).or_insert(0) += 1;
                ops_visited += 1;
                let g = t.inner.grad.borrow().as_ref().expect("interior grad buffer").clone();
                (node.backward)(&g, &node.parents);
            }
        }
        BackwardReport {
            graph_size: self.order.len(),
            ops_visited,
            max_visits_per_node: visits.values().copied().max().unwrap_or(0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constructors_enforce_shape() {
        let t = Tensor::<f64>::constant(vec![2, 3], vec![0.0; 6]);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.len(), 6);
        assert!(!t.requires_grad());
        assert!(t.is_leaf());
    }

    #[test]
    #[should_panic(expected = "wants 6 values")]
    fn wrong_value_count_panics() {
        let _ = Tensor::<f64>::constant(vec![2, 3], vec![0.0; 5]);
    }

    #[test]
    fn scalar_item() {
        assert_eq!(Tensor::scalar(2.5f64).item(), 2.5);
    }

    #[test]
    fn elementwise_square_gradient() {
        // loss = sum(w ⊙ w), w = [1, 2] → grad [2, 4]
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        let loss = w.mul(&w).sum_all();
        loss.backward();
        assert_eq!(w.grad_vec().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        let loss = w.mul(&w).sum_all();
        loss.backward();
        loss.backward();
        assert_eq!(w.grad_vec().unwrap(), vec![4.0, 8.0]);
        w.zero_grad();
        loss.backward();
        assert_eq!(w.grad_vec().unwrap(), vec![2.0, 4.0]);
    }

    #[test]
    fn off_path_leaf_gets_no_grad() {
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        let u = Tensor::parameter(vec![2], vec![3.0f64, 4.0]);
        let loss = w.sum_all();
        loss.backward();
        assert_eq!(w.grad_vec().unwrap(), vec![1.0, 1.0]);
        assert!(u.grad_vec().is_none());
    }

    #[test]
    fn no_grad_leaves_never_materialize() {
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        let c = Tensor::constant(vec![2], vec![5.0f64, 6.0]);
        let loss = w.mul(&c).sum_all();
        loss.backward();
        assert_eq!(w.grad_vec().unwrap(), vec![5.0, 6.0]);
        assert!(c.grad_vec().is_none());
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn non_scalar_backward_panics() {
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        w.mul(&w).backward();
    }

    #[test]
    fn diamond_graph_visits_each_node_once() {
        // loss = sum((w + w) ⊙ w): w feeds two paths that rejoin.
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        let s = w.add(&w);
        let loss = s.mul(&w).sum_all();
        let report = loss.backward();
        assert_eq!(report.max_visits_per_node, 1);
        // d/dw sum(2w²) = 4w
        assert_eq!(w.grad_vec().unwrap(), vec![4.0, 8.0]);
        // graph: w, add, mul, sum → 4 nodes, 3 of them ops
        assert_eq!(report.graph_size, 4);
        assert_eq!(report.ops_visited, 3);
    }

    #[test]
    fn backward_on_constant_graph_is_noop() {
        let c = Tensor::<f64>::constant(vec![2], vec![1.0, 2.0]);
        let loss = c.sum_all();
        let report = loss.backward();
        assert_eq!(report.graph_size, 0);
        assert_eq!(report.ops_visited, 0);
    }

    #[test]
    fn tape_exposes_topological_order() {
        let w = Tensor::parameter(vec![2], vec![1.0f64, 2.0]);
        let loss = w.mul(&w).sum_all();
        let tape = GradientTape::for_root(&loss);
        assert_eq!(tape.len(), 3);
        assert_eq!(tape.seed, 1.0);
        tape.replay();
        assert_eq!(w.grad_vec().unwrap(), vec![2.0, 4.0]);
    }
}
