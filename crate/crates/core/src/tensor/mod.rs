//! Minimal dense N-dimensional arrays with reverse-mode automatic
//! differentiation.
//!
//! Tensors are immutable once created; the only mutable state is the
//! per-tensor gradient store, which `backward` accumulates into. Precision is
//! picked by the element type: `Tensor<f64>` for tests and oracles where
//! finite-difference checks need headroom, `Tensor<f32>` for training speed.
//!
//! Ops run single-threaded; callers parallelize over independent samples and
//! merge gradients in a fixed order, which keeps training bitwise
//! deterministic.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

mod autodiff;
pub mod gradcheck;
pub mod io;
mod ops;
mod optim;

pub use autodiff::{attention, multi_head_attention};
pub use ops::concat;
pub use optim::{adam_step, OptimizerState};

pub(crate) use autodiff::Op;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Dimension { op: &'static str, msg: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward root must be a scalar, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad tensor data: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Element width used by the binary tensor format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(TensorError::Format(format!("unknown dtype `{other}`"))),
        }
    }
}

/// Element type of a [`Tensor`]. Implemented for `f32` and `f64`.
pub trait Scalar:
    num_traits::Float
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    const DTYPE: Dtype;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_le_bytes_vec(self) -> Vec<u8>;
    fn from_le_slice(bytes: &[u8]) -> Self;
}

impl Scalar for f32 {
    const DTYPE: Dtype = Dtype::F32;

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Scalar for f64 {
    const DTYPE: Dtype = Dtype::F64;

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_le_bytes_vec(self) -> Vec<u8> {
        self.to_le_bytes().to_vec()
    }
    fn from_le_slice(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) struct Inner<S: Scalar> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<S>,
    pub(crate) requires_grad: bool,
    /// True when this node or any ancestor requires a gradient; backward
    /// only walks into subgraphs where this is set.
    pub(crate) needs_grad: bool,
    pub(crate) grad: Mutex<Option<Vec<S>>>,
    pub(crate) op: Op<S>,
}

/// Dense row-major N-dimensional array, cheaply clonable (shared storage).
pub struct Tensor<S: Scalar = f32> {
    pub(crate) inner: Arc<Inner<S>>,
}

impl<S: Scalar> Clone for Tensor<S> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<S: Scalar> fmt::Debug for Tensor<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<S: Scalar> Tensor<S> {
    pub(crate) fn leaf(shape: Vec<usize>, data: Vec<S>, requires_grad: bool) -> Result<Self> {
        if numel_of(&shape) != data.len() {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape,
            });
        }
        Ok(Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                needs_grad: requires_grad,
                grad: Mutex::new(None),
                op: Op::Leaf,
            }),
        })
    }

    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<S>, op: Op<S>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let needs_grad = op.parents().iter().any(|p| p.inner.needs_grad);
        // When nothing upstream needs a gradient the graph edges are dropped
        // so intermediate activations free up as soon as possible.
        let op = if needs_grad { op } else { Op::Leaf };
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad: false,
                needs_grad,
                grad: Mutex::new(None),
                op,
            }),
        }
    }

    /// Tensor from row-major data; does not track gradients.
    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, false)
    }

    /// Trainable leaf tensor (gradient-tracked).
    pub fn param(shape: &[usize], data: Vec<S>) -> Result<Self> {
        Self::leaf(shape.to_vec(), data, true)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::leaf(shape.to_vec(), vec![S::zero(); numel_of(shape)], false).unwrap()
    }

    pub fn full(shape: &[usize], value: S) -> Self {
        Self::leaf(shape.to_vec(), vec![value; numel_of(shape)], false).unwrap()
    }

    pub fn scalar(value: S) -> Self {
        Self::leaf(vec![], vec![value], false).unwrap()
    }

    /// Standard-normal samples via Box-Muller, so any `Rng` works.
    pub fn randn<R: rand::Rng>(shape: &[usize], rng: &mut R) -> Self {
        let n = numel_of(shape);
        let mut data = Vec::with_capacity(n);
        while data.len() < n {
            let (a, b) = normal_pair(rng);
            data.push(S::from_f64(a));
            if data.len() < n {
                data.push(S::from_f64(b));
            }
        }
        Self::leaf(shape.to_vec(), data, false).unwrap()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[S] {
        &self.inner.data
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn item(&self) -> Result<S> {
        if self.numel() != 1 {
            return Err(TensorError::Dimension {
                op: "item",
                msg: format!("expected a single element, shape is {:?}", self.shape()),
            });
        }
        Ok(self.inner.data[0])
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<S>> {
        self.inner.grad.lock().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    /// Leaf copy that shares no graph history and tracks no gradient.
    pub fn detach(&self) -> Tensor<S> {
        Self::leaf(self.inner.shape.clone(), self.inner.data.clone(), false).unwrap()
    }

    /// Leaf copy of the same data with the given gradient flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Tensor<S> {
        Self::leaf(self.inner.shape.clone(), self.inner.data.clone(), requires_grad).unwrap()
    }

    /// Convert between precisions through f64.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        let data = self
            .inner
            .data
            .iter()
            .map(|v| T::from_f64(v.as_f64()))
            .collect();
        Tensor::<T>::leaf(self.inner.shape.clone(), data, false).unwrap()
    }

    pub(crate) fn accumulate_grad(&self, delta: &[S]) {
        let mut slot = self.inner.grad.lock().unwrap();
        match slot.as_mut() {
            Some(g) => {
                for (a, b) in g.iter_mut().zip(delta) {
                    *a = *a + *b;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }
}

/// One pair of independent standard-normal draws.
pub fn normal_pair<R: rand::Rng>(rng: &mut R) -> (f64, f64) {
    // Box-Muller; u1 is kept away from zero so ln() stays finite.
    let u1: f64 = rng.random::<f64>().max(1e-300);
    let u2: f64 = rng.random::<f64>();
    let r = (-2.0 * u1.ln()).sqrt();
    let theta = 2.0 * std::f64::consts::PI * u2;
    (r * theta.cos(), r * theta.sin())
}

/// Row-major strides for a shape.
pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1usize; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}
