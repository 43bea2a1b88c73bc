//! Differentiable kernel surface of [`Tensor`].
//!
//! Ops validate shapes, compute forward values eagerly, and attach a backward
//! node to the output while gradient recording is enabled and any input is
//! tracked. All kernels allocate fresh outputs; nothing aliases.

pub(crate) mod raw;

use crate::elem::Elem;
use crate::error::{Result, TensorError};
use crate::tape::{grad_enabled, BackOp, Node};
use crate::tensor::Tensor;

fn node_for<T: Elem>(op: BackOp<T>, parents: Vec<Tensor<T>>) -> Option<Node<T>> {
    if grad_enabled() && parents.iter().any(|p| p.is_tracked()) {
        Some(Node { op, parents })
    } else {
        None
    }
}

fn same_shape<T: Elem>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<T: Elem> Tensor<T> {
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a + b)
            .collect();
        Ok(Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Add, vec![self.clone(), other.clone()]),
        ))
    }

    /// Adds a rank-1 bias broadcast along `axis`.
    pub fn add_bias(&self, bias: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
        if axis >= self.shape().len() || bias.shape() != [self.shape()[axis]] {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let inner: usize = self.shape()[axis + 1..].iter().product();
        let axis_len = self.shape()[axis];
        let b = bias.data();
        let data = self
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| v + b[(i / inner) % axis_len])
            .collect();
        Ok(Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::AddBias { axis }, vec![self.clone(), bias.clone()]),
        ))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a - b)
            .collect();
        Ok(Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Sub, vec![self.clone(), other.clone()]),
        ))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self
            .data()
            .iter()
            .zip(other.data())
            .map(|(&a, &b)| a * b)
            .collect();
        Ok(Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Mul, vec![self.clone(), other.clone()]),
        ))
    }

    pub fn neg(&self) -> Tensor<T> {
        let data = self.data().iter().map(|v| v.neg()).collect();
        Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Neg, vec![self.clone()]),
        )
    }

    pub fn scale(&self, factor: f64) -> Tensor<T> {
        let c = T::from_f64(factor);
        let data = self.data().iter().map(|&v| v * c).collect();
        Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Scale(c), vec![self.clone()]),
        )
    }

    pub fn add_scalar(&self, value: f64) -> Tensor<T> {
        let c = T::from_f64(value);
        let data = self.data().iter().map(|&v| v + c).collect();
        Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::AddScalar, vec![self.clone()]),
        )
    }

    pub fn exp(&self) -> Tensor<T> {
        let data = self.data().iter().map(|v| v.exp()).collect();
        Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Exp, vec![self.clone()]),
        )
    }

    pub fn silu(&self) -> Tensor<T> {
        let data = self
            .data()
            .iter()
            .map(|&v| {
                let vf = v.as_f64();
                T::from_f64(vf / (1.0 + (-vf).exp()))
            })
            .collect();
        Tensor::raw(
            data,
            self.shape().to_vec(),
            node_for(BackOp::Silu, vec![self.clone()]),
        )
    }

    /// Batched matrix product `(..., m, k) x (..., k, n)`.
    ///
    /// The rhs is either rank-2 (shared across the batch) or carries batch
    /// dimensions equal to the lhs batch dimensions. Broadcasting beyond
    /// these two layouts is out of contract.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let a_shape = self.shape();
        let b_shape = other.shape();
        let mismatch = || TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a_shape.to_vec(),
            rhs: b_shape.to_vec(),
        };
        if a_shape.len() < 2 || b_shape.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (a_shape[a_shape.len() - 2], a_shape[a_shape.len() - 1]);
        let (bk, n) = (b_shape[b_shape.len() - 2], b_shape[b_shape.len() - 1]);
        if k != bk {
            return Err(mismatch());
        }
        let a_batch = &a_shape[..a_shape.len() - 2];
        let b_batched = b_shape.len() > 2;
        if b_batched && &b_shape[..b_shape.len() - 2] != a_batch {
            return Err(mismatch());
        }
        let batch: usize = a_batch.iter().product();
        let data = raw::matmul_batched(self.data(), other.data(), batch, m, k, n, b_batched);
        let mut out_shape = a_batch.to_vec();
        out_shape.push(m);
        out_shape.push(n);
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(
                BackOp::Matmul {
                    batch,
                    m,
                    k,
                    n,
                    b_batched,
                },
                vec![self.clone(), other.clone()],
            ),
        ))
    }

    pub fn softmax_lastdim(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        let n = *shape.last().ok_or_else(|| TensorError::InvalidDims {
            op: "softmax_lastdim",
            shape: shape.to_vec(),
            reason: "rank-0 tensor".into(),
        })?;
        if n == 0 {
            return Err(TensorError::InvalidDims {
                op: "softmax_lastdim",
                shape: shape.to_vec(),
                reason: "empty last dimension".into(),
            });
        }
        let data = raw::softmax_rows(self.data(), n);
        Ok(Tensor::raw(
            data,
            shape.to_vec(),
            node_for(BackOp::SoftmaxLastDim, vec![self.clone()]),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::InvalidDims {
                op: "reshape",
                shape: shape.to_vec(),
                reason: format!("cannot view {:?} as {:?}", self.shape(), shape),
            });
        }
        Ok(Tensor::raw(
            self.to_vec(),
            shape.to_vec(),
            node_for(BackOp::Reshape, vec![self.clone()]),
        ))
    }

    pub fn transpose(&self, d0: usize, d1: usize) -> Result<Tensor<T>> {
        let rank = self.shape().len();
        if d0 >= rank || d1 >= rank {
            return Err(TensorError::InvalidDims {
                op: "transpose",
                shape: self.shape().to_vec(),
                reason: format!("axes ({d0}, {d1}) out of range for rank {rank}"),
            });
        }
        let data = raw::swap_axes(self.data(), self.shape(), d0, d1);
        let mut out_shape = self.shape().to_vec();
        out_shape.swap(d0, d1);
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(BackOp::Transpose { d0, d1 }, vec![self.clone()]),
        ))
    }

    pub fn concat(tensors: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = tensors.first().ok_or_else(|| TensorError::Contract {
            op: "concat",
            reason: "empty tensor list".into(),
        })?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(TensorError::InvalidDims {
                op: "concat",
                shape: first.shape().to_vec(),
                reason: format!("axis {axis} out of range for rank {rank}"),
            });
        }
        let mut axis_total = 0usize;
        for t in tensors {
            if t.shape().len() != rank
                || t.shape()[..axis] != first.shape()[..axis]
                || t.shape()[axis + 1..] != first.shape()[axis + 1..]
            {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            axis_total += t.shape()[axis];
        }
        let outer: usize = first.shape()[..axis].iter().product();
        let inner: usize = first.shape()[axis + 1..].iter().product();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = axis_total;
        let mut data = vec![T::zero(); outer * axis_total * inner];
        let mut offset = 0usize;
        for t in tensors {
            let len = t.shape()[axis];
            let src = t.data();
            for o in 0..outer {
                let dst = (o * axis_total + offset) * inner;
                let s = o * len * inner;
                data[dst..dst + len * inner].copy_from_slice(&src[s..s + len * inner]);
            }
            offset += len;
        }
        let parents: Vec<Tensor<T>> = tensors.iter().map(|t| (*t).clone()).collect();
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(BackOp::Concat { axis }, parents),
        ))
    }

    /// Contiguous slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(TensorError::InvalidDims {
                op: "narrow",
                shape: shape.to_vec(),
                reason: format!("range {start}..{} along axis {axis}", start + len),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let axis_len = shape[axis];
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = vec![T::zero(); outer * len * inner];
        for o in 0..outer {
            let src = (o * axis_len + start) * inner;
            let dst = o * len * inner;
            data[dst..dst + len * inner].copy_from_slice(&self.data()[src..src + len * inner]);
        }
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(BackOp::Narrow { axis, start }, vec![self.clone()]),
        ))
    }

    /// Tiles the tensor `times` times along `axis`.
    pub fn repeat_axis(&self, axis: usize, times: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || times == 0 {
            return Err(TensorError::InvalidDims {
                op: "repeat_axis",
                shape: shape.to_vec(),
                reason: format!("axis {axis}, times {times}"),
            });
        }
        let outer: usize = shape[..axis].iter().product();
        let block = shape[axis] * shape[axis + 1..].iter().product::<usize>();
        let mut out_shape = shape.to_vec();
        out_shape[axis] *= times;
        let mut data = vec![T::zero(); self.numel() * times];
        for o in 0..outer {
            let src = &self.data()[o * block..(o + 1) * block];
            for rep in 0..times {
                let dst = (o * times + rep) * block;
                data[dst..dst + block].copy_from_slice(src);
            }
        }
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(BackOp::RepeatAxis { axis, times }, vec![self.clone()]),
        ))
    }

    pub fn mean_all(&self) -> Result<Tensor<T>> {
        if self.numel() == 0 {
            return Err(TensorError::Contract {
                op: "mean_all",
                reason: "empty tensor".into(),
            });
        }
        let sum: f64 = self.data().iter().map(|v| v.as_f64()).sum();
        Ok(Tensor::raw(
            vec![T::from_f64(sum / self.numel() as f64)],
            vec![1],
            node_for(BackOp::MeanAll, vec![self.clone()]),
        ))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let sum: f64 = self.data().iter().map(|v| v.as_f64()).sum();
        Tensor::raw(
            vec![T::from_f64(sum)],
            vec![1],
            node_for(BackOp::SumAll, vec![self.clone()]),
        )
    }

    /// Mean squared error against a target, as a scalar tensor.
    pub fn mse(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mse", self, target)?;
        let diff = self.sub(target)?;
        diff.mul(&diff)?.mean_all()
    }

    /// 2-D convolution over `(batch, c_in, h, w)` with zero padding.
    ///
    /// Supported kernels are 1x1 (no pad) and 3x3 (pad 1), stride 1 or 2.
    pub fn conv2d(&self, weight: &Tensor<T>, bias: &Tensor<T>, stride: usize) -> Result<Tensor<T>> {
        let dims = raw::Conv2dDims::new(self.shape(), weight.shape(), stride).ok_or_else(|| {
            TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            }
        })?;
        if bias.shape() != [dims.c_out] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: vec![dims.c_out],
                rhs: bias.shape().to_vec(),
            });
        }
        let data = raw::conv2d_forward(self.data(), weight.data(), bias.data(), &dims);
        let out_shape = vec![dims.batch, dims.c_out, dims.oh, dims.ow];
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(
                BackOp::Conv2d { stride },
                vec![self.clone(), weight.clone(), bias.clone()],
            ),
        ))
    }

    /// Group normalization over `(n, c, ...)` with per-channel affine.
    pub fn group_norm(
        &self,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        groups: usize,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() < 2 {
            return Err(TensorError::InvalidDims {
                op: "group_norm",
                shape: shape.to_vec(),
                reason: "need at least (n, c)".into(),
            });
        }
        let (n, c) = (shape[0], shape[1]);
        if groups == 0 || c % groups != 0 {
            return Err(TensorError::InvalidDims {
                op: "group_norm",
                shape: shape.to_vec(),
                reason: format!("{groups} groups do not divide {c} channels"),
            });
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(TensorError::ShapeMismatch {
                op: "group_norm",
                lhs: vec![c],
                rhs: gamma.shape().to_vec(),
            });
        }
        let spatial: usize = shape[2..].iter().product();
        let data = raw::group_norm_forward(
            self.data(),
            gamma.data(),
            beta.data(),
            n,
            c,
            spatial,
            groups,
            eps,
        );
        Ok(Tensor::raw(
            data,
            shape.to_vec(),
            node_for(
                BackOp::GroupNorm { groups, eps },
                vec![self.clone(), gamma.clone(), beta.clone()],
            ),
        ))
    }

    /// Nearest-neighbor 2x spatial upsampling of `(n, c, h, w)`.
    pub fn upsample_nearest_2x(&self) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() != 4 {
            return Err(TensorError::InvalidDims {
                op: "upsample_nearest_2x",
                shape: shape.to_vec(),
                reason: "need (n, c, h, w)".into(),
            });
        }
        let planes = shape[0] * shape[1];
        let data = raw::upsample_nearest_2x(self.data(), planes, shape[2], shape[3]);
        let out_shape = vec![shape[0], shape[1], shape[2] * 2, shape[3] * 2];
        Ok(Tensor::raw(
            data,
            out_shape,
            node_for(BackOp::UpsampleNearest2x, vec![self.clone()]),
        ))
    }

    /// Selects rows of a rank-2 table; rows may repeat.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        if shape.len() != 2 {
            return Err(TensorError::InvalidDims {
                op: "gather_rows",
                shape: shape.to_vec(),
                reason: "need a rank-2 table".into(),
            });
        }
        let (rows, d) = (shape[0], shape[1]);
        for &idx in indices {
            if idx >= rows {
                return Err(TensorError::Contract {
                    op: "gather_rows",
                    reason: format!("row {idx} out of range ({rows} rows)"),
                });
            }
        }
        let mut data = vec![T::zero(); indices.len() * d];
        for (i, &idx) in indices.iter().enumerate() {
            data[i * d..(i + 1) * d].copy_from_slice(&self.data()[idx * d..(idx + 1) * d]);
        }
        Ok(Tensor::raw(
            data,
            vec![indices.len(), d],
            node_for(
                BackOp::GatherRows {
                    indices: indices.to_vec(),
                },
                vec![self.clone()],
            ),
        ))
    }

    /// Affine map over the last dimension: `x @ w + b`.
    pub fn linear(&self, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let y = self.matmul(weight)?;
        let axis = y.shape().len() - 1;
        y.add_bias(bias, axis)
    }
}
