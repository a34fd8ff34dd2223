//! The tensor value type and the reverse-mode gradient tape.
//!
//! Every op produces a fresh [`Tensor`] whose node remembers its parents and a
//! backward closure. Node ids increase monotonically, so sorting the reachable
//! subgraph by descending id is a valid reverse topological order.

use std::cell::Cell;
use std::collections::HashMap;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard, RwLockWriteGuard};

use crate::error::{Result, TensorError};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

thread_local! {
    static NO_GRAD_DEPTH: Cell<u32> = const { Cell::new(0) };
}

/// Maps the upstream gradient of an op's output to gradients of its parents
/// (one entry per parent, `None` where the parent takes no gradient).
pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Node {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<f64>>,
    grad: Mutex<Option<Vec<f64>>>,
    requires_grad: bool,
    grad_fn: Option<GradFn>,
}

/// N-dimensional f64 array with an optional gradient trace.
///
/// Cloning is cheap (shared handle). Data is row-major.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

/// Disables graph construction on this thread while alive.
pub struct NoGradGuard(());

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        NO_GRAD_DEPTH.with(|d| d.set(d.get() - 1));
    }
}

/// Ops executed while the returned guard lives record no backward graph.
pub fn no_grad() -> NoGradGuard {
    NO_GRAD_DEPTH.with(|d| d.set(d.get() + 1));
    NoGradGuard(())
}

fn grad_enabled() -> bool {
    NO_GRAD_DEPTH.with(|d| d.get() == 0)
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool, grad_fn: Option<GradFn>) -> Tensor {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            grad_fn,
        }))
    }

    /// A constant (no gradient) tensor.
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(TensorError::shape(
                "Tensor::new",
                format!("shape {shape:?} holds {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Tensor::build(data, shape.to_vec(), false, None))
    }

    /// A trainable leaf: gradients accumulate into it on backward.
    pub fn param(data: Vec<f64>, shape: &[usize]) -> Result<Tensor> {
        if numel(shape) != data.len() {
            return Err(TensorError::shape(
                "Tensor::param",
                format!("shape {shape:?} holds {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Tensor::build(data, shape.to_vec(), true, None))
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::build(vec![0.0; numel(shape)], shape.to_vec(), false, None)
    }

    pub fn scalar(v: f64) -> Tensor {
        Tensor::build(vec![v], Vec::new(), false, None)
    }

    /// Result of a differentiable op. The graph is only recorded when some
    /// parent requires a gradient and no [`no_grad`] guard is active.
    pub(crate) fn from_op(
        data: Vec<f64>,
        shape: Vec<usize>,
        parents: Vec<Tensor>,
        backward: impl Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    ) -> Tensor {
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        let grad_fn = requires_grad.then(|| GradFn { parents, backward: Box::new(backward) });
        Tensor::build(data, shape, requires_grad, grad_fn)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<f64>> {
        self.0.data.read().expect("tensor data lock poisoned")
    }

    /// Mutable access to the buffer; intended for optimizers and checkpoint loading.
    pub fn data_mut(&self) -> RwLockWriteGuard<'_, Vec<f64>> {
        self.0.data.write().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data().clone()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {:?}", self.shape());
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    /// Sets the accumulated gradient to zeros.
    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = Some(vec![0.0; self.numel()]);
    }

    pub fn clear_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    /// A constant copy that shares no graph with `self`.
    pub fn detach(&self) -> Tensor {
        Tensor::build(self.to_vec(), self.0.shape.clone(), false, None)
    }

    fn accumulate(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Back-propagates from this scalar, accumulating into every reachable
    /// leaf that requires a gradient.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let mut nodes: Vec<Tensor> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.id()) {
                continue;
            }
            if let Some(gf) = &t.0.grad_fn {
                stack.extend(gf.parents.iter().filter(|p| p.requires_grad()).cloned());
            }
            nodes.push(t);
        }
        nodes.sort_by_key(|t| std::cmp::Reverse(t.id()));

        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);
        for node in &nodes {
            let Some(g) = pending.remove(&node.id()) else { continue };
            match &node.0.grad_fn {
                None => node.accumulate(&g),
                Some(gf) => {
                    let parent_grads = (gf.backward)(&g);
                    for (parent, pg) in gf.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops;

    #[test]
    fn backward_of_sum_is_ones() {
        let w = Tensor::param(vec![0.3, -1.0, 2.0], &[3]).unwrap();
        ops::sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn backward_of_square_sum() {
        let w = Tensor::param(vec![1.0, 2.0, 3.0], &[3]).unwrap();
        ops::sum(&ops::mul(&w, &w).unwrap()).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 4.0, 6.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let w = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        ops::sum(&w).backward().unwrap();
        ops::sum(&w).backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![2.0, 2.0]);
        w.zero_grad();
        assert_eq!(w.grad().unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn non_scalar_backward_is_rejected() {
        let w = Tensor::param(vec![1.0, 2.0], &[2]).unwrap();
        let y = ops::scale(&w, 2.0);
        assert!(matches!(y.backward(), Err(TensorError::NotScalar(_))));
    }

    #[test]
    fn no_grad_skips_graph() {
        let w = Tensor::param(vec![1.0], &[1]).unwrap();
        let y = {
            let _g = no_grad();
            ops::scale(&w, 3.0)
        };
        assert!(!y.requires_grad());
        assert!(ops::scale(&w, 3.0).requires_grad());
    }

    #[test]
    fn shared_subexpression_gradients_add() {
        // y = sum(2w) + sum(w) -> dy/dw = 3
        let w = Tensor::param(vec![0.5, 1.5], &[2]).unwrap();
        let a = ops::scale(&w, 2.0);
        let y = ops::add(&ops::sum(&a), &ops::sum(&w)).unwrap();
        y.backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![3.0, 3.0]);
    }

    #[test]
    fn constructor_checks_element_count() {
        assert!(Tensor::new(vec![1.0; 5], &[2, 3]).is_err());
    }
}
