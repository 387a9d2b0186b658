//! Dense f64 tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable shaped buffer. All arithmetic goes through a
//! [`Tape`](tape::Tape), which records every primitive so that
//! [`Tape::backward`](tape::Tape::backward) can replay the graph in reverse
//! and produce gradients for the leaves. Tapes are per-sample: one forward
//! pass, one backward pass, then the tape is dropped or reset. Parameters are
//! plain leaf tensors shared read-only between tapes.

pub mod gradcheck;
pub mod ops;
pub mod tape;

use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crate::error::TensorError;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

static LIVE_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

fn track_alloc(bytes: usize) {
    let live = LIVE_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK_BYTES.fetch_max(live, Ordering::Relaxed);
}

fn track_free(bytes: usize) {
    LIVE_BYTES.fetch_sub(bytes, Ordering::Relaxed);
}

/// Bytes currently held by live tensor buffers.
pub fn live_tensor_bytes() -> usize {
    LIVE_BYTES.load(Ordering::Relaxed)
}

/// High-water mark of tensor buffer bytes since the last [`reset_peak_tensor_bytes`].
pub fn peak_tensor_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

/// Resets the high-water mark to the current live byte count.
pub fn reset_peak_tensor_bytes() {
    PEAK_BYTES.store(LIVE_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

struct Storage {
    data: Vec<f64>,
}

impl Storage {
    fn new(data: Vec<f64>) -> Self {
        track_alloc(data.len() * std::mem::size_of::<f64>());
        Storage { data }
    }
}

impl Drop for Storage {
    fn drop(&mut self) {
        track_free(self.data.len() * std::mem::size_of::<f64>());
    }
}

struct TensorInner {
    id: u64,
    shape: Vec<usize>,
    storage: Storage,
    requires_grad: bool,
}

/// An immutable dense array of f64 values.
///
/// Cloning is cheap (reference counted). Every tensor has a globally unique
/// id; gradients coming out of a tape are keyed by it.
#[derive(Clone)]
pub struct Tensor {
    inner: Arc<TensorInner>,
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Arc::new(TensorInner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                storage: Storage::new(data),
                requires_grad,
            }),
        }
    }

    /// Builds a tensor from a flat row-major buffer.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                op: "from_vec",
                detail: format!("shape {:?} wants {} values, got {}", shape, numel, data.len()),
            });
        }
        Ok(Tensor::new(shape.to_vec(), data, false))
    }

    /// Builds a trainable leaf tensor (gradients will be reported for it).
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let t = Tensor::from_vec(shape, data)?;
        Ok(t.requires_grad(true))
    }

    /// Returns a copy of this handle with the given `requires_grad` flag.
    ///
    /// The underlying buffer is shared; only the flag differs, under a fresh id.
    pub fn requires_grad(&self, flag: bool) -> Self {
        if self.inner.requires_grad == flag {
            return self.clone();
        }
        Tensor::new(self.inner.shape.clone(), self.data().to_vec(), flag)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; numel], false)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![value; numel], false)
    }

    /// A scalar constant of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor::new(vec![1], vec![value], false)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.storage.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.inner.storage.data
    }

    pub fn requires_grad_flag(&self) -> bool {
        self.inner.requires_grad
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.numel() != 1 {
            return Err(TensorError::NotScalar {
                op: "item",
                shape: self.shape().to_vec(),
            });
        }
        Ok(self.data()[0])
    }

    /// Row `i` of a rank-2 tensor as a slice.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = *self.shape().last().unwrap();
        &self.data()[i * cols..(i + 1) * cols]
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.id())
            .field("shape", &self.shape())
            .field("requires_grad", &self.requires_grad_flag())
            .finish()
    }
}

/// (outer, axis extent, inner) decomposition used by axis-wise primitives.
pub(crate) fn outer_inner(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer: usize = shape[..axis].iter().product();
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, n, inner)
}
