//! Reverse-mode differentiation over a dynamically recorded op graph.
//!
//! Every differentiable op attaches a [`Node`] to its output while recording
//! is enabled. Node ids are allocated in creation order, so walking pending
//! gradients from the highest id downward visits each node exactly once in
//! reverse topological order.

use std::cell::Cell;
use std::collections::BTreeMap;

use crate::elem::Elem;
use crate::error::{Result, TensorError};
use crate::ops::raw;
use crate::tensor::Tensor;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|c| c.get())
}

/// Disables graph recording on this thread until the guard drops.
///
/// Used by samplers and evaluation code so long loops of forward passes do
/// not retain their history.
pub struct NoGradGuard {
    prev: bool,
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|c| c.replace(false));
    NoGradGuard { prev }
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        let prev = self.prev;
        GRAD_ENABLED.with(|c| c.set(prev));
    }
}

#[derive(Debug)]
pub(crate) enum BackOp<T: Elem> {
    Add,
    AddBias { axis: usize },
    Sub,
    Mul,
    Neg,
    Scale(T),
    AddScalar,
    Exp,
    Silu,
    Matmul { batch: usize, m: usize, k: usize, n: usize, b_batched: bool },
    SoftmaxLastDim,
    Reshape,
    Transpose { d0: usize, d1: usize },
    Concat { axis: usize },
    Narrow { axis: usize, start: usize },
    RepeatAxis { axis: usize, times: usize },
    MeanAll,
    SumAll,
    Conv2d { stride: usize },
    GroupNorm { groups: usize, eps: f64 },
    UpsampleNearest2x,
    GatherRows { indices: Vec<usize> },
}

pub(crate) struct Node<T: Elem> {
    pub(crate) op: BackOp<T>,
    pub(crate) parents: Vec<Tensor<T>>,
}

/// Gradients of a scalar loss with respect to every participating parameter
/// leaf, keyed by tensor id.
pub struct Gradients<T: Elem> {
    grads: BTreeMap<u64, Tensor<T>>,
    visited_nodes: usize,
}

impl<T: Elem> Gradients<T> {
    /// Gradient for a leaf; zero if the leaf did not participate in the loss.
    pub fn get(&self, leaf: &Tensor<T>) -> Tensor<T> {
        self.grads
            .get(&leaf.id())
            .cloned()
            .unwrap_or_else(|| leaf.zeros_like())
    }

    pub fn contains(&self, leaf: &Tensor<T>) -> bool {
        self.grads.contains_key(&leaf.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    /// Number of graph nodes expanded during the backward walk.
    pub fn visited_nodes(&self) -> usize {
        self.visited_nodes
    }
}

fn accumulate<T: Elem>(pending: &mut BTreeMap<u64, Vec<T>>, id: u64, grad: Vec<T>) {
    match pending.entry(id) {
        std::collections::btree_map::Entry::Vacant(e) => {
            e.insert(grad);
        }
        std::collections::btree_map::Entry::Occupied(mut e) => {
            for (acc, g) in e.get_mut().iter_mut().zip(grad) {
                *acc = *acc + g;
            }
        }
    }
}

/// Reverse-mode gradient of a scalar loss.
pub fn backward<T: Elem>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    if loss.numel() != 1 {
        return Err(TensorError::Contract {
            op: "backward",
            reason: format!("loss must be a scalar, shape is {:?}", loss.shape()),
        });
    }

    // Index reachable tensors by id so pending gradients can find them.
    let mut by_id: BTreeMap<u64, Tensor<T>> = BTreeMap::new();
    let mut stack = vec![loss.clone()];
    while let Some(t) = stack.pop() {
        if by_id.contains_key(&t.id()) {
            continue;
        }
        if let Some(node) = t.node() {
            for p in &node.parents {
                if p.is_tracked() && !by_id.contains_key(&p.id()) {
                    stack.push(p.clone());
                }
            }
        }
        by_id.insert(t.id(), t);
    }

    let mut pending: BTreeMap<u64, Vec<T>> = BTreeMap::new();
    pending.insert(loss.id(), vec![T::one()]);
    let mut grads = BTreeMap::new();
    let mut visited_nodes = 0usize;

    while let Some((&id, _)) = pending.last_key_value() {
        let grad = pending.remove(&id).unwrap();
        let tensor = by_id.get(&id).expect("pending id must be reachable");

        if let Some(node) = tensor.node() {
            visited_nodes += 1;
            let parent_grads = op_backward(&node.op, &node.parents, tensor, &grad);
            for (parent, pg) in node.parents.iter().zip(parent_grads) {
                if let Some(pg) = pg {
                    if parent.is_tracked() {
                        accumulate(&mut pending, parent.id(), pg);
                    }
                }
            }
        } else if tensor.is_param() {
            let grad = Tensor::from_vec(grad, tensor.shape())?;
            grads.insert(id, grad);
        }
    }

    Ok(Gradients {
        grads,
        visited_nodes,
    })
}

/// Per-parent gradients for one op. `None` marks an untracked parent slot.
fn op_backward<T: Elem>(
    op: &BackOp<T>,
    parents: &[Tensor<T>],
    out: &Tensor<T>,
    grad: &[T],
) -> Vec<Option<Vec<T>>> {
    match op {
        BackOp::Add => vec![Some(grad.to_vec()), Some(grad.to_vec())],
        BackOp::AddBias { axis } => {
            let shape = parents[0].shape();
            let axis_len = shape[*axis];
            let inner: usize = shape[axis + 1..].iter().product();
            let mut d_bias = vec![0.0f64; axis_len];
            for (i, g) in grad.iter().enumerate() {
                d_bias[(i / inner) % axis_len] += g.as_f64();
            }
            vec![
                Some(grad.to_vec()),
                Some(d_bias.into_iter().map(T::from_f64).collect()),
            ]
        }
        BackOp::Sub => vec![
            Some(grad.to_vec()),
            Some(grad.iter().map(|g| g.neg()).collect()),
        ],
        BackOp::Mul => {
            let a = parents[0].data();
            let b = parents[1].data();
            vec![
                Some(grad.iter().zip(b).map(|(g, &v)| *g * v).collect()),
                Some(grad.iter().zip(a).map(|(g, &v)| *g * v).collect()),
            ]
        }
        BackOp::Neg => vec![Some(grad.iter().map(|g| g.neg()).collect())],
        BackOp::Scale(c) => vec![Some(grad.iter().map(|g| *g * *c).collect())],
        BackOp::AddScalar => vec![Some(grad.to_vec())],
        BackOp::Exp => {
            let y = out.data();
            vec![Some(grad.iter().zip(y).map(|(g, &v)| *g * v).collect())]
        }
        BackOp::Silu => {
            let x = parents[0].data();
            let d = grad
                .iter()
                .zip(x)
                .map(|(g, &v)| {
                    let vf = v.as_f64();
                    let s = 1.0 / (1.0 + (-vf).exp());
                    T::from_f64(g.as_f64() * (s * (1.0 + vf * (1.0 - s))))
                })
                .collect();
            vec![Some(d)]
        }
        BackOp::Matmul {
            batch,
            m,
            k,
            n,
            b_batched,
        } => {
            let a = parents[0].data();
            let b = parents[1].data();
            let (batch, m, k, n) = (*batch, *m, *k, *n);
            let d_a = if *b_batched {
                let b_t = raw::transpose_last2(b, batch, k, n);
                raw::matmul_batched(grad, &b_t, batch, m, n, k, true)
            } else {
                let b_t = raw::transpose_last2(b, 1, k, n);
                raw::matmul_batched(grad, &b_t, batch, m, n, k, false)
            };
            let d_b = if *b_batched {
                let a_t = raw::transpose_last2(a, batch, m, k);
                raw::matmul_batched(&a_t, grad, batch, k, m, n, true)
            } else {
                // Shared rhs: fold the batch into rows before the transpose so
                // gradients from every batch accumulate in one pass.
                let a_t = raw::transpose_last2(a, 1, batch * m, k);
                raw::matmul_batched(&a_t, grad, 1, k, batch * m, n, false)
            };
            vec![Some(d_a), Some(d_b)]
        }
        BackOp::SoftmaxLastDim => {
            let n = *out.shape().last().unwrap();
            let scores = parents[0].data();
            vec![Some(raw::softmax_rows_backward(scores, grad, n))]
        }
        BackOp::Reshape => vec![Some(grad.to_vec())],
        BackOp::Transpose { d0, d1 } => {
            vec![Some(raw::swap_axes(grad, out.shape(), *d0, *d1))]
        }
        BackOp::Concat { axis } => {
            let out_shape = out.shape();
            let outer: usize = out_shape[..*axis].iter().product();
            let inner: usize = out_shape[axis + 1..].iter().product();
            let total_axis = out_shape[*axis];
            let mut offsets = Vec::with_capacity(parents.len());
            let mut acc = 0usize;
            for p in parents {
                offsets.push(acc);
                acc += p.shape()[*axis];
            }
            parents
                .iter()
                .zip(&offsets)
                .map(|(p, &off)| {
                    let len = p.shape()[*axis];
                    let mut d = vec![T::zero(); p.numel()];
                    for o in 0..outer {
                        let src = (o * total_axis + off) * inner;
                        let dst = o * len * inner;
                        d[dst..dst + len * inner]
                            .copy_from_slice(&grad[src..src + len * inner]);
                    }
                    Some(d)
                })
                .collect()
        }
        BackOp::Narrow { axis, start } => {
            let p_shape = parents[0].shape();
            let outer: usize = p_shape[..*axis].iter().product();
            let inner: usize = p_shape[axis + 1..].iter().product();
            let p_len = p_shape[*axis];
            let o_len = out.shape()[*axis];
            let mut d = vec![T::zero(); parents[0].numel()];
            for o in 0..outer {
                let dst = (o * p_len + start) * inner;
                let src = o * o_len * inner;
                d[dst..dst + o_len * inner].copy_from_slice(&grad[src..src + o_len * inner]);
            }
            vec![Some(d)]
        }
        BackOp::RepeatAxis { axis, times } => {
            let p_shape = parents[0].shape();
            let outer: usize = p_shape[..*axis].iter().product();
            let len = p_shape[*axis];
            let inner: usize = p_shape[axis + 1..].iter().product();
            let mut d = vec![T::zero(); parents[0].numel()];
            for o in 0..outer {
                for rep in 0..*times {
                    let src = (o * times + rep) * len * inner;
                    let dst = o * len * inner;
                    for i in 0..len * inner {
                        d[dst + i] = d[dst + i] + grad[src + i];
                    }
                }
            }
            vec![Some(d)]
        }
        BackOp::MeanAll => {
            let n = parents[0].numel();
            let g = T::from_f64(grad[0].as_f64() / n as f64);
            vec![Some(vec![g; n])]
        }
        BackOp::SumAll => {
            let n = parents[0].numel();
            vec![Some(vec![grad[0]; n])]
        }
        BackOp::Conv2d { stride } => {
            let input = &parents[0];
            let weight = &parents[1];
            let dims = raw::Conv2dDims::new(input.shape(), weight.shape(), *stride)
                .expect("conv dims were validated at forward time");
            let (d_in, d_w, d_b) =
                raw::conv2d_backward(input.data(), weight.data(), grad, &dims);
            vec![Some(d_in), Some(d_w), Some(d_b)]
        }
        BackOp::GroupNorm { groups, eps } => {
            let x = &parents[0];
            let gamma = &parents[1];
            let shape = x.shape();
            let (n, c) = (shape[0], shape[1]);
            let spatial: usize = shape[2..].iter().product();
            let (d_x, d_gamma, d_beta) = raw::group_norm_backward(
                x.data(),
                gamma.data(),
                grad,
                n,
                c,
                spatial,
                *groups,
                *eps,
            );
            vec![Some(d_x), Some(d_gamma), Some(d_beta)]
        }
        BackOp::UpsampleNearest2x => {
            let shape = parents[0].shape();
            let planes = shape[0] * shape[1];
            vec![Some(raw::upsample_nearest_2x_backward(
                grad, planes, shape[2], shape[3],
            ))]
        }
        BackOp::GatherRows { indices } => {
            let table_shape = parents[0].shape();
            let d = table_shape[1];
            let mut d_table = vec![T::zero(); parents[0].numel()];
            for (row, &idx) in indices.iter().enumerate() {
                for j in 0..d {
                    d_table[idx * d + j] = d_table[idx * d + j] + grad[row * d + j];
                }
            }
            vec![Some(d_table)]
        }
    }
}
