//! Dense tensors with define-by-run reverse-mode differentiation.
//!
//! Every operation whose inputs track gradients records a node holding its
//! inputs and a backward rule. [`Tensor::backward`] walks the recorded graph
//! in reverse topological order, summing gradients at fan-out points, and
//! deposits results in the `grad` buffers of gradient-tracking leaves.
//! Gradients accumulate across calls; use [`Tensor::zero_grad`] between steps.

mod check;
mod element;
mod graph;
mod ops;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock, RwLockReadGuard};

use crate::error::{Error, Result};

pub use check::{finite_diff_grad, relative_error};
pub use element::Element;
pub use graph::{is_grad_enabled, no_grad};

/// Backward rule of a recorded operation: maps the gradient of the output to
/// one optional gradient per input (`None` where an input is not
/// differentiable or does not track gradients).
pub type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Option<Vec<T>>> + Send + Sync>;

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Recorded<T: Element> {
    name: &'static str,
    inputs: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Node<T: Element> {
    id: u64,
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    grad: Mutex<Option<Vec<T>>>,
    requires_grad: bool,
    op: Option<Recorded<T>>,
}

/// N-dimensional array of `T` in row-major order.
///
/// Cloning is cheap and yields a handle to the same storage.
pub struct Tensor<T: Element = f32>(Arc<Node<T>>);

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Arc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape)
            .field("dtype", &T::NAME)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(op) = &self.0.op {
            s.field("op", &op.name);
        }
        let data = self.data();
        if data.len() <= 16 {
            s.field("data", &&data[..]);
        }
        s.finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn leaf(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel(&shape), data.len());
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad,
            op: None,
        }))
    }

    /// Constant tensor (does not track gradients).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel(shape) != data.len() {
            return Err(Error::invalid(
                "from_vec",
                format!("shape {shape:?} needs {} values, got {}", numel(shape), data.len()),
            ));
        }
        Ok(Self::leaf(shape.to_vec(), data, false))
    }

    /// Gradient-tracking leaf, i.e. a learnable parameter or a checked input.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.tracked())
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| T::from_f64_lossy(v)).collect())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel(shape)], false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf(vec![1], vec![value], false)
    }

    /// A new gradient-tracking leaf holding a copy of this tensor's values.
    pub fn tracked(&self) -> Self {
        if self.is_leaf() && self.0.requires_grad {
            return self.clone();
        }
        Self::leaf(self.0.shape.clone(), self.to_vec(), true)
    }

    /// A new constant leaf holding a copy of this tensor's values.
    pub fn detach(&self) -> Self {
        Self::leaf(self.0.shape.clone(), self.to_vec(), false)
    }

    /// Builds the result of a custom operation. The backward rule is
    /// recorded only when gradient recording is enabled and at least one
    /// input tracks gradients.
    pub fn from_op(
        name: &'static str,
        shape: Vec<usize>,
        data: Vec<T>,
        inputs: &[&Tensor<T>],
        backward: BackwardFn<T>,
    ) -> Self {
        assert_eq!(numel(&shape), data.len(), "{name}: output size mismatch");
        debug_assert!(
            !data.iter().any(|v| v.is_nan()) || inputs.iter().any(|t| t.data().iter().any(|v| !v.is_finite())),
            "{name}: produced NaN from finite inputs"
        );
        let track = graph::is_grad_enabled() && inputs.iter().any(|t| t.0.requires_grad);
        let op = track.then(|| Recorded {
            name,
            inputs: inputs.iter().map(|&t| t.clone()).collect(),
            backward,
        });
        Tensor(Arc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RwLock::new(data),
            grad: Mutex::new(None),
            requires_grad: track,
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel(&self.0.shape)
    }

    /// Extent along `axis`; panics on an out-of-range axis.
    pub fn dim(&self, axis: usize) -> usize {
        self.0.shape[axis]
    }

    /// `(N, C, H, W)` of a 4-D tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.0.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::invalid(
                op,
                format!("expected a 4-D tensor, got shape {:?}", self.0.shape),
            )),
        }
    }

    pub fn data(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.0.data.read()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.read().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.read().iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let data = self.data();
        assert_eq!(data.len(), 1, "item() on tensor of shape {:?}", self.0.shape);
        data[0]
    }

    /// Overwrites the values in place. Used by optimizers and for running
    /// statistics; graph nodes that already read the old values keep them.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        if data.len() != self.numel() {
            return Err(Error::invalid(
                "set_data",
                format!("tensor of shape {:?} cannot take {} values", self.0.shape, data.len()),
            ));
        }
        *self.0.data.write() = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.write());
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn op_name(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(|op| op.name)
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.lock().clone()
    }

    pub fn grad_or_zeros(&self) -> Vec<T> {
        self.grad().unwrap_or_else(|| vec![T::zero(); self.numel()])
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock() = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.0.grad.lock();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a = *a + b),
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn id(&self) -> u64 {
        self.0.id
    }

    /// Same values viewed with a different shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.numel() {
            return Err(Error::shape("reshape", &self.0.shape, shape));
        }
        Ok(Self::from_op(
            "reshape",
            shape.to_vec(),
            self.to_vec(),
            &[self],
            Box::new(|g| vec![Some(g.to_vec())]),
        ))
    }

    /// Converts to another element type as a new constant leaf.
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
            .collect();
        Tensor::leaf(self.0.shape.clone(), data, false)
    }
}
