use std::cell::{Ref, RefCell};
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;

pub(crate) struct TensorInner<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub grad: Option<Vec<T>>,
    pub requires_grad: bool,
    /// (tape id, node id) of the most recent tape this tensor was seen on.
    pub mark: Option<(u64, usize)>,
}

/// Shared handle to an n-dimensional row-major array. Cloning is cheap and
/// aliases the same storage; the tape and the optimizer rely on that.
pub struct Tensor<T: Scalar> {
    pub(crate) inner: Rc<RefCell<TensorInner<T>>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(TensorError::shape("from_vec", format!("zero-size dim in {shape:?}")));
        }
        if numel_of(shape) != data.len() {
            return Err(TensorError::shape(
                "from_vec",
                format!("shape {:?} wants {} elements, got {}", shape, numel_of(shape), data.len()),
            ));
        }
        Ok(Self::new_unchecked(shape.to_vec(), data, false))
    }

    /// Leaf with `requires_grad = true`; gradients accumulate into its slot.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        t.inner.borrow_mut().requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new_unchecked(shape.to_vec(), vec![T::zero(); numel_of(shape)], false)
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::new_unchecked(shape.to_vec(), vec![v; numel_of(shape)], false)
    }

    pub fn scalar(v: T) -> Self {
        Self::new_unchecked(vec![], vec![v], false)
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(RefCell::new(TensorInner {
                shape,
                data,
                grad: None,
                requires_grad,
                mark: None,
            })),
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.borrow().shape.clone()
    }

    pub fn numel(&self) -> usize {
        self.inner.borrow().data.len()
    }

    pub fn rank(&self) -> usize {
        self.inner.borrow().shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.borrow().requires_grad
    }

    pub fn set_requires_grad(&self, on: bool) {
        self.inner.borrow_mut().requires_grad = on;
    }

    /// Borrow the flat data. Panics if the tensor is mutably borrowed.
    pub fn data(&self) -> Ref<'_, [T]> {
        Ref::map(self.inner.borrow(), |i| i.data.as_slice())
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.borrow().data.clone()
    }

    pub fn item(&self) -> Result<T> {
        let b = self.inner.borrow();
        if b.data.len() != 1 {
            return Err(TensorError::shape("item", format!("numel {} != 1", b.data.len())));
        }
        Ok(b.data[0])
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.borrow().grad.clone()
    }

    pub fn zero_grad(&self) {
        self.inner.borrow_mut().grad = None;
    }

    /// Overwrite the gradient slot directly (tests, manual updates).
    pub fn set_grad(&self, g: &[T]) {
        self.inner.borrow_mut().grad = Some(g.to_vec());
    }

    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut b = self.inner.borrow_mut();
        match &mut b.grad {
            Some(slot) => {
                for (s, &gi) in slot.iter_mut().zip(g) {
                    *s += gi;
                }
            }
            None => b.grad = Some(g.to_vec()),
        }
    }

    /// Overwrite the contents in place (same numel required).
    pub fn copy_from(&self, data: &[T]) -> Result<()> {
        let mut b = self.inner.borrow_mut();
        if b.data.len() != data.len() {
            return Err(TensorError::shape(
                "copy_from",
                format!("numel {} != {}", b.data.len(), data.len()),
            ));
        }
        b.data.copy_from_slice(data);
        Ok(())
    }

    /// Mutate one element in place (used by the finite-difference checker).
    pub fn nudge(&self, idx: usize, delta: T) {
        let mut b = self.inner.borrow_mut();
        b.data[idx] = b.data[idx] + delta;
    }

    pub(crate) fn mark(&self) -> Option<(u64, usize)> {
        self.inner.borrow().mark
    }

    pub(crate) fn set_mark(&self, tape_id: u64, node_id: usize) {
        self.inner.borrow_mut().mark = Some((tape_id, node_id));
    }

    /// Detached copy of the values; shares nothing with `self`.
    pub fn detach(&self) -> Tensor<T> {
        let b = self.inner.borrow();
        Tensor::new_unchecked(b.shape.clone(), b.data.clone(), false)
    }

    pub fn all_finite(&self) -> bool {
        self.inner.borrow().data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.inner.borrow();
        write!(f, "Tensor{:?}", b.shape)?;
        if b.data.len() <= 16 {
            write!(f, " {:?}", b.data)
        } else {
            write!(f, " [{} values]", b.data.len())
        }
    }
}

/// Debug-build guard: documented ops must not manufacture NaN/Inf from
/// finite inputs.
pub(crate) fn debug_check_finite<T: Scalar>(op: &'static str, data: &[T]) {
    if cfg!(debug_assertions) {
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "non-finite output produced by {op}"
        );
    }
}
