//! Slice-level kernels shared by forward ops and their backward passes.
//!
//! Everything here is deterministic: parallel loops split work so that each
//! output element is produced by exactly one task with a fixed-order inner
//! reduction, making parallel results bit-identical to sequential ones.

use rayon::prelude::*;

use crate::elem::Elem;

/// Work threshold below which kernels stay sequential.
const PAR_THRESHOLD: usize = 1 << 14;

pub(crate) fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

/// C[b] = A[b] (m,k) x B[b or shared] (k,n), accumulated in element order.
pub(crate) fn matmul_batched<T: Elem>(
    a: &[T],
    b: &[T],
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    let row_body = |row: usize, out_row: &mut [T]| {
        let bi = row / m;
        let i = row % m;
        let a_row = &a[(bi * m + i) * k..(bi * m + i) * k + k];
        let b_mat = if b_batched {
            &b[bi * k * n..(bi + 1) * k * n]
        } else {
            b
        };
        for (p, &apv) in a_row.iter().enumerate() {
            let b_row = &b_mat[p * n..p * n + n];
            for j in 0..n {
                out_row[j] = out_row[j] + apv * b_row[j];
            }
        }
    };
    if batch * m * n * k >= PAR_THRESHOLD && batch * m > 1 {
        out.par_chunks_mut(n)
            .enumerate()
            .for_each(|(row, out_row)| row_body(row, out_row));
    } else {
        for (row, out_row) in out.chunks_mut(n).enumerate() {
            row_body(row, out_row);
        }
    }
    out
}

/// (batch, m, n) -> (batch, n, m).
pub(crate) fn transpose_last2<T: Elem>(a: &[T], batch: usize, m: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); a.len()];
    for bi in 0..batch {
        let src = &a[bi * m * n..(bi + 1) * m * n];
        let dst = &mut out[bi * m * n..(bi + 1) * m * n];
        for i in 0..m {
            for j in 0..n {
                dst[j * m + i] = src[i * n + j];
            }
        }
    }
    out
}

/// Swap two axes of a row-major tensor by copy.
pub(crate) fn swap_axes<T: Elem>(data: &[T], shape: &[usize], d0: usize, d1: usize) -> Vec<T> {
    if d0 == d1 {
        return data.to_vec();
    }
    let (d0, d1) = (d0.min(d1), d0.max(d1));
    let mut out_shape = shape.to_vec();
    out_shape.swap(d0, d1);
    let in_strides = strides_of(shape);
    let out_strides = strides_of(&out_shape);

    // Decompose as (outer, s0, mid, s1, inner) with s0/s1 the swapped axes.
    let outer: usize = shape[..d0].iter().product();
    let s0 = shape[d0];
    let mid: usize = shape[d0 + 1..d1].iter().product();
    let s1 = shape[d1];
    let inner: usize = shape[d1 + 1..].iter().product();

    let mut out = vec![T::zero(); data.len()];
    for o in 0..outer {
        for i0 in 0..s0 {
            for m in 0..mid {
                for i1 in 0..s1 {
                    let src = o * (s0 * mid * s1 * inner)
                        + i0 * in_strides[d0]
                        + m * inner * s1
                        + i1 * inner;
                    let dst = o * (s0 * mid * s1 * inner)
                        + i1 * out_strides[d0]
                        + m * inner * s0
                        + i0 * inner;
                    out[dst..dst + inner].copy_from_slice(&data[src..src + inner]);
                }
            }
        }
    }
    out
}

/// Row-wise softmax over the last dimension with max subtraction.
pub(crate) fn softmax_rows<T: Elem>(data: &[T], n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); data.len()];
    let body = |src: &[T], dst: &mut [T]| {
        let mut max = src[0];
        for &v in &src[1..] {
            if v > max {
                max = v;
            }
        }
        let mut sum = 0.0f64;
        for (d, &v) in dst.iter_mut().zip(src) {
            let e = (v - max).exp();
            sum += e.as_f64();
            *d = e;
        }
        let inv = T::from_f64(1.0 / sum);
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    };
    if data.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(n)
            .zip(data.par_chunks(n))
            .for_each(|(dst, src)| body(src, dst));
    } else {
        for (dst, src) in out.chunks_mut(n).zip(data.chunks(n)) {
            body(src, dst);
        }
    }
    out
}

pub(crate) fn softmax_rows_backward<T: Elem>(scores: &[T], grad: &[T], n: usize) -> Vec<T> {
    let sm = softmax_rows(scores, n);
    let mut out = vec![T::zero(); grad.len()];
    for ((dst, s), g) in out.chunks_mut(n).zip(sm.chunks(n)).zip(grad.chunks(n)) {
        let mut dot = 0.0f64;
        for (sv, gv) in s.iter().zip(g) {
            dot += sv.as_f64() * gv.as_f64();
        }
        let dot = T::from_f64(dot);
        for ((d, &sv), &gv) in dst.iter_mut().zip(s).zip(g) {
            *d = sv * (gv - dot);
        }
    }
    out
}

pub(crate) struct Conv2dDims {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Conv2dDims {
    pub fn new(
        input_shape: &[usize],
        weight_shape: &[usize],
        stride: usize,
    ) -> Option<Conv2dDims> {
        if input_shape.len() != 4 || weight_shape.len() != 4 {
            return None;
        }
        let (batch, c_in, h, w) = (
            input_shape[0],
            input_shape[1],
            input_shape[2],
            input_shape[3],
        );
        let (c_out, wc_in, kh, kw) = (
            weight_shape[0],
            weight_shape[1],
            weight_shape[2],
            weight_shape[3],
        );
        if wc_in != c_in || kh != kw || !(kh == 1 || kh == 3) || !(stride == 1 || stride == 2) {
            return None;
        }
        let pad = kh / 2;
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return None;
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Some(Conv2dDims {
            batch,
            c_in,
            h,
            w,
            c_out,
            kernel: kh,
            stride,
            pad,
            oh,
            ow,
        })
    }

    fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }
}

/// Unfold input into (batch*oh*ow, c_in*k*k) patch rows, zero padded.
fn im2col<T: Elem>(input: &[T], d: &Conv2dDims) -> Vec<T> {
    let ck = d.patch_len();
    let rows = d.batch * d.oh * d.ow;
    let mut cols = vec![T::zero(); rows * ck];
    let per_image = d.oh * d.ow;
    cols.par_chunks_mut(per_image * ck)
        .enumerate()
        .for_each(|(b, image_cols)| {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let row = oy * d.ow + ox;
                    let dst = &mut image_cols[row * ck..(row + 1) * ck];
                    for ci in 0..d.c_in {
                        let plane = &input[(b * d.c_in + ci) * d.h * d.w..];
                        for ky in 0..d.kernel {
                            let y = (oy * d.stride + ky) as isize - d.pad as isize;
                            for kx in 0..d.kernel {
                                let x = (ox * d.stride + kx) as isize - d.pad as isize;
                                let idx = (ci * d.kernel + ky) * d.kernel + kx;
                                if y >= 0 && (y as usize) < d.h && x >= 0 && (x as usize) < d.w {
                                    dst[idx] = plane[y as usize * d.w + x as usize];
                                }
                            }
                        }
                    }
                }
            }
        });
    cols
}

/// (batch*oh*ow, c_out) rows -> (batch, c_out, oh, ow).
fn rows_to_nchw<T: Elem>(rows: &[T], d: &Conv2dDims) -> Vec<T> {
    let per_image = d.oh * d.ow;
    let mut out = vec![T::zero(); d.batch * d.c_out * per_image];
    for b in 0..d.batch {
        for p in 0..per_image {
            let src = &rows[(b * per_image + p) * d.c_out..];
            for co in 0..d.c_out {
                out[(b * d.c_out + co) * per_image + p] = src[co];
            }
        }
    }
    out
}

fn nchw_to_rows<T: Elem>(grad: &[T], d: &Conv2dDims) -> Vec<T> {
    let per_image = d.oh * d.ow;
    let mut rows = vec![T::zero(); d.batch * per_image * d.c_out];
    for b in 0..d.batch {
        for co in 0..d.c_out {
            let src = &grad[(b * d.c_out + co) * per_image..];
            for p in 0..per_image {
                rows[(b * per_image + p) * d.c_out + co] = src[p];
            }
        }
    }
    rows
}

pub(crate) fn conv2d_forward<T: Elem>(
    input: &[T],
    weight: &[T],
    bias: &[T],
    d: &Conv2dDims,
) -> Vec<T> {
    let ck = d.patch_len();
    let cols = im2col(input, d);
    let w_t = transpose_last2(weight, 1, d.c_out, ck);
    let mut rows = matmul_batched(&cols, &w_t, 1, d.batch * d.oh * d.ow, ck, d.c_out, false);
    for row in rows.chunks_mut(d.c_out) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
    rows_to_nchw(&rows, d)
}

/// Returns (d_input, d_weight, d_bias).
pub(crate) fn conv2d_backward<T: Elem>(
    input: &[T],
    weight: &[T],
    grad: &[T],
    d: &Conv2dDims,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let ck = d.patch_len();
    let rows_n = d.batch * d.oh * d.ow;
    let cols = im2col(input, d);
    let g_rows = nchw_to_rows(grad, d);

    let g_rows_t = transpose_last2(&g_rows, 1, rows_n, d.c_out);
    let d_weight = matmul_batched(&g_rows_t, &cols, 1, d.c_out, rows_n, ck, false);

    let mut d_bias = vec![T::zero(); d.c_out];
    for row in g_rows.chunks(d.c_out) {
        for (acc, &g) in d_bias.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }

    let d_cols = matmul_batched(&g_rows, weight, 1, rows_n, d.c_out, ck, false);

    let mut d_input = vec![T::zero(); d.batch * d.c_in * d.h * d.w];
    let per_image = d.oh * d.ow;
    d_input
        .par_chunks_mut(d.c_in * d.h * d.w)
        .enumerate()
        .for_each(|(b, image_grad)| {
            for oy in 0..d.oh {
                for ox in 0..d.ow {
                    let row = b * per_image + oy * d.ow + ox;
                    let src = &d_cols[row * ck..(row + 1) * ck];
                    for ci in 0..d.c_in {
                        for ky in 0..d.kernel {
                            let y = (oy * d.stride + ky) as isize - d.pad as isize;
                            for kx in 0..d.kernel {
                                let x = (ox * d.stride + kx) as isize - d.pad as isize;
                                if y >= 0 && (y as usize) < d.h && x >= 0 && (x as usize) < d.w {
                                    let dst = (ci * d.h + y as usize) * d.w + x as usize;
                                    let idx = (ci * d.kernel + ky) * d.kernel + kx;
                                    image_grad[dst] = image_grad[dst] + src[idx];
                                }
                            }
                        }
                    }
                }
            }
        });

    (d_input, d_weight, d_bias)
}

/// Per-(sample, group) mean and inverse stddev in f64.
pub(crate) fn group_norm_stats<T: Elem>(
    x: &[T],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
    eps: f64,
) -> (Vec<f64>, Vec<f64>) {
    let cg = c / groups;
    let group_len = cg * spatial;
    let mut means = vec![0.0f64; n * groups];
    let mut invstds = vec![0.0f64; n * groups];
    for ni in 0..n {
        for g in 0..groups {
            let base = ni * c * spatial + g * cg * spatial;
            let slice = &x[base..base + group_len];
            let mut sum = 0.0f64;
            for &v in slice {
                sum += v.as_f64();
            }
            let mean = sum / group_len as f64;
            let mut var = 0.0f64;
            for &v in slice {
                let d = v.as_f64() - mean;
                var += d * d;
            }
            var /= group_len as f64;
            means[ni * groups + g] = mean;
            invstds[ni * groups + g] = 1.0 / (var + eps).sqrt();
        }
    }
    (means, invstds)
}

pub(crate) fn group_norm_forward<T: Elem>(
    x: &[T],
    gamma: &[T],
    beta: &[T],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
    eps: f64,
) -> Vec<T> {
    let (means, invstds) = group_norm_stats(x, n, c, spatial, groups, eps);
    let cg = c / groups;
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            let g = ci / cg;
            let mean = T::from_f64(means[ni * groups + g]);
            let invstd = T::from_f64(invstds[ni * groups + g]);
            let base = (ni * c + ci) * spatial;
            for s in 0..spatial {
                out[base + s] = (x[base + s] - mean) * invstd * gamma[ci] + beta[ci];
            }
        }
    }
    out
}

/// Returns (d_x, d_gamma, d_beta).
pub(crate) fn group_norm_backward<T: Elem>(
    x: &[T],
    gamma: &[T],
    grad: &[T],
    n: usize,
    c: usize,
    spatial: usize,
    groups: usize,
    eps: f64,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (means, invstds) = group_norm_stats(x, n, c, spatial, groups, eps);
    let cg = c / groups;
    let group_len = (cg * spatial) as f64;
    let mut d_x = vec![T::zero(); x.len()];
    let mut d_gamma = vec![0.0f64; c];
    let mut d_beta = vec![0.0f64; c];

    for ni in 0..n {
        for g in 0..groups {
            let mean = means[ni * groups + g];
            let invstd = invstds[ni * groups + g];
            let c0 = g * cg;

            let mut sum_dxhat = 0.0f64;
            let mut sum_dxhat_xhat = 0.0f64;
            for ci in c0..c0 + cg {
                let base = (ni * c + ci) * spatial;
                let gam = gamma[ci].as_f64();
                for s in 0..spatial {
                    let xhat = (x[base + s].as_f64() - mean) * invstd;
                    let gv = grad[base + s].as_f64();
                    let dxhat = gv * gam;
                    sum_dxhat += dxhat;
                    sum_dxhat_xhat += dxhat * xhat;
                    d_gamma[ci] += gv * xhat;
                    d_beta[ci] += gv;
                }
            }

            for ci in c0..c0 + cg {
                let base = (ni * c + ci) * spatial;
                let gam = gamma[ci].as_f64();
                for s in 0..spatial {
                    let xhat = (x[base + s].as_f64() - mean) * invstd;
                    let dxhat = grad[base + s].as_f64() * gam;
                    let dv = invstd
                        * (dxhat - sum_dxhat / group_len - xhat * sum_dxhat_xhat / group_len);
                    d_x[base + s] = T::from_f64(dv);
                }
            }
        }
    }

    let d_gamma = d_gamma.into_iter().map(T::from_f64).collect();
    let d_beta = d_beta.into_iter().map(T::from_f64).collect();
    (d_x, d_gamma, d_beta)
}

pub(crate) fn upsample_nearest_2x<T: Elem>(x: &[T], planes: usize, h: usize, w: usize) -> Vec<T> {
    let mut out = vec![T::zero(); planes * 4 * h * w];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * 4 * h * w..(p + 1) * 4 * h * w];
        for y in 0..2 * h {
            for x2 in 0..2 * w {
                dst[y * 2 * w + x2] = src[(y / 2) * w + x2 / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample_nearest_2x_backward<T: Elem>(
    grad: &[T],
    planes: usize,
    h: usize,
    w: usize,
) -> Vec<T> {
    let mut out = vec![T::zero(); planes * h * w];
    for p in 0..planes {
        let src = &grad[p * 4 * h * w..(p + 1) * 4 * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..2 * h {
            for x2 in 0..2 * w {
                let d = &mut dst[(y / 2) * w + x2 / 2];
                *d = *d + src[y * 2 * w + x2];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_matches_hand_result() {
        // [[1,2],[3,4]] x [[5,6],[7,8]] = [[19,22],[43,50]]
        let a = vec![1.0f64, 2.0, 3.0, 4.0];
        let b = vec![5.0, 6.0, 7.0, 8.0];
        let c = matmul_batched(&a, &b, 1, 2, 2, 2, false);
        assert_eq!(c, vec![19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_shared_rhs_equals_per_batch() {
        let a = vec![1.0f64, 0.0, 2.0, -1.0, 3.0, 1.0, 0.5, 2.0];
        let b = vec![1.0, 2.0, 3.0, 4.0];
        let shared = matmul_batched(&a, &b, 2, 2, 2, 2, false);
        let b2 = [b.clone(), b.clone()].concat();
        let batched = matmul_batched(&a, &b2, 2, 2, 2, 2, true);
        assert_eq!(shared, batched);
    }

    #[test]
    fn swap_axes_round_trips() {
        let shape = [2, 3, 4, 5];
        let data: Vec<f64> = (0..120).map(|v| v as f64).collect();
        for d0 in 0..4 {
            for d1 in 0..4 {
                let once = swap_axes(&data, &shape, d0, d1);
                let mut swapped = shape.to_vec();
                swapped.swap(d0, d1);
                let back = swap_axes(&once, &swapped, d0, d1);
                assert_eq!(back, data, "axes {d0} {d1}");
            }
        }
    }

    #[test]
    fn softmax_rows_are_normalized_and_shift_invariant() {
        let data = vec![1.0f64, 2.0, 3.0, -1.0, 0.0, 1.0];
        let s = softmax_rows(&data, 3);
        for row in s.chunks(3) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<f64> = data.iter().map(|v| v + 100.0).collect();
        let s2 = softmax_rows(&shifted, 3);
        for (a, b) in s.iter().zip(&s2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1x1_is_channel_mix() {
        // 1x1 conv with weight [[2.0]] and bias 1.0 doubles and shifts.
        let d = Conv2dDims::new(&[1, 1, 2, 2], &[1, 1, 1, 1], 1).unwrap();
        let out = conv2d_forward(&[1.0f64, 2.0, 3.0, 4.0], &[2.0], &[1.0], &d);
        assert_eq!(out, vec![3.0, 5.0, 7.0, 9.0]);
    }

    #[test]
    fn conv3x3_identity_kernel_preserves_input() {
        let mut w = vec![0.0f64; 9];
        w[4] = 1.0;
        let input: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let d = Conv2dDims::new(&[1, 1, 3, 4], &[1, 1, 3, 3], 1).unwrap();
        let out = conv2d_forward(&input, &w, &[0.0], &d);
        assert_eq!(out, input);
    }

    #[test]
    fn conv_stride2_halves_spatial_dims() {
        let d = Conv2dDims::new(&[1, 1, 4, 6], &[1, 1, 3, 3], 2).unwrap();
        assert_eq!((d.oh, d.ow), (2, 3));
    }

    #[test]
    fn group_norm_normalizes_each_group() {
        let x = vec![1.0f64, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0];
        let out = group_norm_forward(&x, &[1.0, 1.0], &[0.0, 0.0], 1, 2, 4, 2, 1e-8);
        for group in out.chunks(4) {
            let mean: f64 = group.iter().sum::<f64>() / 4.0;
            let var: f64 = group.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn upsample_backward_sums_blocks() {
        let g = vec![1.0f64; 16];
        let d = upsample_nearest_2x_backward(&g, 1, 2, 2);
        assert_eq!(d, vec![4.0; 4]);
    }
}
