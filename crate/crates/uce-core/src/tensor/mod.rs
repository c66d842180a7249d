//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Storage is 32-bit; reductions accumulate in 64-bit. A [`Tensor`] is a
//! cheap handle (`Rc`); values are immutable after creation except for the
//! gradient slot and explicit in-place parameter updates by the optimizer.
//! Operations live in [`ops`]; [`CompRecord`] holds the recorded
//! operations and [`backward`] replays them in reverse.

pub mod ops;
mod record;

pub use record::{backward, CompRecord};

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::rc::Rc;

use crate::error::{Error, Result};

thread_local! {
    static LIVE_BYTES: Cell<usize> = const { Cell::new(0) };
    static PEAK_BYTES: Cell<usize> = const { Cell::new(0) };
}

fn track_alloc(bytes: usize) {
    LIVE_BYTES.with(|l| {
        let live = l.get() + bytes;
        l.set(live);
        PEAK_BYTES.with(|p| {
            if live > p.get() {
                p.set(live);
            }
        });
    });
}

fn track_free(bytes: usize) {
    LIVE_BYTES.with(|l| l.set(l.get().saturating_sub(bytes)));
}

/// (live bytes, peak bytes) of tensor storage on this thread.
pub fn alloc_stats() -> (usize, usize) {
    (LIVE_BYTES.with(Cell::get), PEAK_BYTES.with(Cell::get))
}

/// Reset the peak-bytes watermark to the current live count.
pub fn reset_peak_bytes() {
    let live = LIVE_BYTES.with(Cell::get);
    PEAK_BYTES.with(|p| p.set(live));
}

struct TensorInner {
    shape: Vec<usize>,
    data: RefCell<Vec<f32>>,
    requires_grad: Cell<bool>,
    grad: RefCell<Option<Vec<f32>>>,
    tracked_bytes: Cell<usize>,
}

impl Drop for TensorInner {
    fn drop(&mut self) {
        track_free(self.tracked_bytes.get());
    }
}

/// Dense row-major array of `f32` with an optional gradient slot.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<TensorInner>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor(shape={:?}, requires_grad={})",
            self.shape(),
            self.requires_grad()
        )
    }
}

impl Tensor {
    /// Build a tensor, validating shape/data consistency and finiteness.
    pub fn from_vec(shape: &[usize], data: Vec<f32>) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if shape.contains(&0) {
            return Err(Error::Dim(format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Dim(format!(
                "shape {shape:?} wants {numel} elements, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite value in tensor data".into()));
        }
        Ok(Tensor::new_unchecked(shape.to_vec(), data))
    }

    pub(crate) fn new_unchecked(shape: Vec<usize>, data: Vec<f32>) -> Tensor {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let bytes = data.len() * std::mem::size_of::<f32>();
        track_alloc(bytes);
        Tensor {
            inner: Rc::new(TensorInner {
                shape,
                data: RefCell::new(data),
                requires_grad: Cell::new(false),
                grad: RefCell::new(None),
                tracked_bytes: Cell::new(bytes),
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new_unchecked(shape.to_vec(), vec![0.0; numel])
    }

    pub fn ones(shape: &[usize]) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new_unchecked(shape.to_vec(), vec![1.0; numel])
    }

    pub fn full(shape: &[usize], value: f32) -> Tensor {
        let numel = shape.iter().product();
        Tensor::new_unchecked(shape.to_vec(), vec![value; numel])
    }

    pub fn scalar(value: f32) -> Tensor {
        Tensor::new_unchecked(vec![1], vec![value])
    }

    /// Mark this tensor as a gradient leaf and return it.
    pub fn requiring_grad(self) -> Tensor {
        self.inner.requires_grad.set(true);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub(crate) fn set_requires_grad(&self, value: bool) {
        self.inner.requires_grad.set(value);
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.inner.data.borrow()
    }

    /// Mutable access to the raw storage (optimizer updates, test setup).
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.inner.data.borrow().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f32> {
        if !self.is_scalar() {
            return Err(Error::Precondition(format!(
                "item() on tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(self.inner.data.borrow()[0])
    }

    /// Current gradient, if one has been accumulated.
    pub fn grad(&self) -> Option<Vec<f32>> {
        self.inner.grad.borrow().clone()
    }

    pub(crate) fn grad_ref(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.inner.grad.borrow()
    }

    /// Clear the gradient slot back to zeros (allocating it if absent).
    pub fn zero_grad(&self) {
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => buf.iter_mut().for_each(|v| *v = 0.0),
            None => {
                let n = self.numel();
                track_alloc(n * 4);
                self.inner
                    .tracked_bytes
                    .set(self.inner.tracked_bytes.get() + n * 4);
                *g = Some(vec![0.0; n]);
            }
        }
    }

    /// Accumulate `delta` into the gradient slot (allocating zeros first if absent).
    pub(crate) fn accumulate_grad(&self, delta: &[f32]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b += d;
                }
            }
            None => {
                track_alloc(delta.len() * 4);
                self.inner
                    .tracked_bytes
                    .set(self.inner.tracked_bytes.get() + delta.len() * 4);
                *g = Some(delta.to_vec());
            }
        }
    }

    /// Accumulate via a filler that writes deltas into a zeroed scratch view.
    pub(crate) fn accumulate_grad_with(&self, fill: impl FnOnce(&mut [f32])) {
        let mut g = self.inner.grad.borrow_mut();
        if g.is_none() {
            let n = self.numel();
            track_alloc(n * 4);
            self.inner
                .tracked_bytes
                .set(self.inner.tracked_bytes.get() + n * 4);
            *g = Some(vec![0.0; n]);
        }
        fill(g.as_mut().unwrap());
    }

    /// Error if any stored value is NaN or infinite.
    pub fn validate_finite(&self) -> Result<()> {
        if self.inner.data.borrow().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value in tensor of shape {:?}",
                self.shape()
            )));
        }
        Ok(())
    }

    /// True when two handles refer to the same storage.
    pub fn same_storage(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}
