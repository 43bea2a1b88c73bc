use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::elem::{Dtype, Elem};
use crate::error::{Result, TensorError};
use crate::tape::Node;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

pub(crate) struct Inner<T: Elem> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: Vec<T>,
    pub(crate) node: Option<Node<T>>,
    pub(crate) requires_grad: bool,
}

/// Dense row-major tensor over f32 or f64.
///
/// Cloning is cheap (shared storage). Operations that participate in
/// differentiation record a graph node on their output while gradient
/// recording is enabled (see [`crate::tape::no_grad`]); `backward` walks that
/// graph in reverse creation order.
pub struct Tensor<T: Elem> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Elem> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Elem> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor<{:?}>(id={}, shape={:?}, tracked={})",
            T::DTYPE,
            self.inner.id,
            self.inner.shape,
            self.is_tracked()
        )
    }
}

pub(crate) fn check_shape(op: &'static str, shape: &[usize], len: usize) -> Result<()> {
    let numel: usize = shape.iter().product();
    if numel != len {
        return Err(TensorError::InvalidDims {
            op,
            shape: shape.to_vec(),
            reason: format!("shape holds {numel} elements but data holds {len}"),
        });
    }
    Ok(())
}

impl<T: Elem> Tensor<T> {
    pub(crate) fn raw(data: Vec<T>, shape: Vec<usize>, node: Option<Node<T>>) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape,
                data,
                node,
                requires_grad: false,
            }),
        }
    }

    /// Leaf tensor from explicit data.
    pub fn from_vec(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape("from_vec", shape, data.len())?;
        Ok(Self::raw(data, shape.to_vec(), None))
    }

    /// Leaf tensor that will receive a gradient from `backward`.
    pub fn param(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        check_shape("param", shape, data.len())?;
        Ok(Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape: shape.to_vec(),
                data,
                node: None,
                requires_grad: true,
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Self::raw(vec![T::zero(); numel], shape.to_vec(), None)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Self::raw(vec![value; numel], shape.to_vec(), None)
    }

    pub fn scalar(value: T) -> Self {
        Self::raw(vec![value], vec![1], None)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.shape())
    }

    /// Re-tag this tensor's data as a fresh gradient-receiving leaf.
    pub fn into_param(self) -> Self {
        Tensor {
            inner: Arc::new(Inner {
                id: fresh_id(),
                shape: self.inner.shape.clone(),
                data: self.inner.data.clone(),
                node: None,
                requires_grad: true,
            }),
        }
    }

    /// Detached copy: same values, no graph history, not a parameter.
    pub fn detach(&self) -> Self {
        Self::raw(self.inner.data.clone(), self.inner.shape.clone(), None)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn dtype(&self) -> Dtype {
        T::DTYPE
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.clone()
    }

    pub fn is_param(&self) -> bool {
        self.inner.requires_grad
    }

    /// True when this tensor participates in the differentiation graph.
    pub fn is_tracked(&self) -> bool {
        self.inner.requires_grad || self.inner.node.is_some()
    }

    pub(crate) fn node(&self) -> Option<&Node<T>> {
        self.inner.node.as_ref()
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(TensorError::Contract {
                op: "item",
                reason: format!("expected one element, shape is {:?}", self.shape()),
            });
        }
        Ok(self.inner.data[0])
    }

    /// Errors if any element is NaN or infinite.
    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.inner.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite { op })
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Result<f64> {
        if self.shape() != other.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "max_abs_diff",
                lhs: self.shape().to_vec(),
                rhs: other.shape().to_vec(),
            });
        }
        Ok(self
            .data()
            .iter()
            .zip(other.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).abs())
            .fold(0.0, f64::max))
    }

    /// Converts elementwise between the two supported dtypes.
    pub fn cast<U: Elem>(&self) -> Tensor<U> {
        let data = self.data().iter().map(|v| U::from_f64(v.as_f64())).collect();
        Tensor::raw(data, self.shape().to_vec(), None)
    }
}
