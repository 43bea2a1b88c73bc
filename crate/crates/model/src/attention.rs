//! The three decomposed attention blocks and the brute-force full-attention
//! oracle they are verified against.
//!
//! Tokens are carried as (T, V, N, c): frame, view, spatial token (h*w in
//! row-major order), channel. Every block is residual with a pre-layernorm:
//! `x + Wo * Attention(LN(x))`, and every output projection starts at zero,
//! so a freshly initialized block is the identity map.

use mvd_tensor::rng::DetRng;
use mvd_tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};

const NORM_EPS: f64 = 1e-5;
const MASKED_LOGIT: f64 = -1e9;

/// How views are wired for cross-view attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewAdjacency {
    /// View V-1 neighbors view 0, matching a full surround rig.
    Cyclic,
    /// Endpoints have a single neighbor.
    Linear,
}

impl ViewAdjacency {
    /// Neighboring views of `v`, deduplicated, never containing `v` itself.
    pub fn neighbors(&self, v: usize, views: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(2);
        match self {
            ViewAdjacency::Cyclic => {
                if views >= 2 {
                    let prev = (v + views - 1) % views;
                    let next = (v + 1) % views;
                    out.push(prev);
                    if next != prev {
                        out.push(next);
                    }
                }
            }
            ViewAdjacency::Linear => {
                if v > 0 {
                    out.push(v - 1);
                }
                if v + 1 < views {
                    out.push(v + 1);
                }
            }
        }
        out
    }

    pub fn are_neighbors(&self, a: usize, b: usize, views: usize) -> bool {
        self.neighbors(a, views).contains(&b)
    }
}

/// Shared shape parameters of an attention stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub view_adjacency: ViewAdjacency,
    pub enable_cross_view: bool,
    pub enable_cross_frame: bool,
}

impl AttentionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(ModelError::Config(format!(
                "embed_dim {} must be a positive multiple of num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Learned weights of one attention block: pre-norm scale/shift, Q/K/V
/// projections, and the zero-initialized output projection (no bias, so a
/// zero `wo` makes the block's contribution exactly zero).
#[derive(Debug, Clone)]
pub struct AttentionParams<T: Elem> {
    pub norm_gamma: Tensor<T>,
    pub norm_beta: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

impl<T: Elem> AttentionParams<T> {
    /// Fresh block weights; `kv_dim` is the channel width of the key/value
    /// source (equal to `embed_dim` except for text cross-attention).
    pub fn init(embed_dim: usize, kv_dim: usize, rng: &mut DetRng) -> Result<Self> {
        let std_q = 1.0 / (embed_dim as f64).sqrt();
        let std_kv = 1.0 / (kv_dim as f64).sqrt();
        Ok(AttentionParams {
            norm_gamma: Tensor::full(&[embed_dim], T::from_f64(1.0)).into_param(),
            norm_beta: Tensor::zeros(&[embed_dim]).into_param(),
            wq: rng.normal_param(&[embed_dim, embed_dim], std_q)?,
            wk: rng.normal_param(&[kv_dim, embed_dim], std_kv)?,
            wv: rng.normal_param(&[kv_dim, embed_dim], std_kv)?,
            wo: Tensor::zeros(&[embed_dim, embed_dim]).into_param(),
        })
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.norm_gamma"), &mut self.norm_gamma);
        f(&format!("{prefix}.norm_beta"), &mut self.norm_beta);
        f(&format!("{prefix}.wq"), &mut self.wq);
        f(&format!("{prefix}.wk"), &mut self.wk);
        f(&format!("{prefix}.wv"), &mut self.wv);
        f(&format!("{prefix}.wo"), &mut self.wo);
    }

    pub(crate) fn norm(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = tokens.shape().to_vec();
        let c = *shape.last().unwrap();
        let rows: usize = tokens.numel() / c;
        let out = tokens
            .reshape(&[rows, c])?
            .group_norm(&self.norm_gamma, &self.norm_beta, 1, NORM_EPS)?;
        Ok(out.reshape(&shape)?)
    }
}

fn split_heads<T: Elem>(x: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    Ok(x.reshape(&[b, n, heads, c / heads])?
        .transpose(1, 2)?
        .reshape(&[b * heads, n, c / heads])?)
}

fn merge_heads<T: Elem>(x: &Tensor<T>, heads: usize) -> Result<Tensor<T>> {
    let (bh, n, hd) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let b = bh / heads;
    Ok(x.reshape(&[b, heads, n, hd])?
        .transpose(1, 2)?
        .reshape(&[b, n, heads * hd])?)
}

/// Scaled dot-product attention over already-normalized token groups.
/// `q_tokens` is (B, nq, c), `kv_tokens` is (B, nk, kv_dim); the result is
/// (B, nq, c) after the output projection, without the residual.
pub(crate) fn attend<T: Elem>(
    q_tokens: &Tensor<T>,
    kv_tokens: &Tensor<T>,
    params: &AttentionParams<T>,
    heads: usize,
) -> Result<Tensor<T>> {
    let q = split_heads(&q_tokens.matmul(&params.wq)?, heads)?;
    let k = split_heads(&kv_tokens.matmul(&params.wk)?, heads)?;
    let v = split_heads(&kv_tokens.matmul(&params.wv)?, heads)?;
    let scale = 1.0 / (q.shape()[2] as f64).sqrt();
    let scores = q.matmul(&k.transpose(1, 2)?)?.scale(scale);
    let attn = scores.softmax_lastdim()?;
    let mixed = merge_heads(&attn.matmul(&v)?, heads)?;
    Ok(mixed.matmul(&params.wo)?)
}

fn check_tokens<T: Elem>(x: &Tensor<T>, cfg: &AttentionConfig, op: &'static str) -> Result<()> {
    cfg.validate()?;
    if x.shape().len() != 4 {
        return Err(ModelError::Dim {
            op,
            reason: format!("expected (T, V, N, c) tokens, got shape {:?}", x.shape()),
        });
    }
    if x.shape()[3] != cfg.embed_dim {
        return Err(ModelError::Dim {
            op,
            reason: format!(
                "channel dim {} does not match embed_dim {}",
                x.shape()[3],
                cfg.embed_dim
            ),
        });
    }
    Ok(())
}

/// Spatial self-attention within each (frame, view) panel; no information
/// crosses frames or views.
pub fn intra_view_attention<T: Elem>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    check_tokens(x, cfg, "intra_view_attention")?;
    let (t, v, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let groups = x.reshape(&[t * v, n, c])?;
    let normed = params.norm(&groups)?;
    let att = attend(&normed, &normed, params, cfg.num_heads)?;
    Ok(x.add(&att.reshape(&[t, v, n, c])?)?)
}

/// Queries of each view attend over the concatenated keys/values of its
/// adjacent views in the same frame. A view with no neighbors passes
/// through unchanged.
pub fn cross_view_attention<T: Elem>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    cfg: &AttentionConfig,
) -> Result<Tensor<T>> {
    check_tokens(x, cfg, "cross_view_attention")?;
    let (t, v, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let mut contributions = Vec::with_capacity(v);
    for view in 0..v {
        let q_view = x.narrow(1, view, 1)?.reshape(&[t, n, c])?;
        let neighbors = cfg.view_adjacency.neighbors(view, v);
        if neighbors.is_empty() {
            contributions.push(Tensor::zeros(&[t, 1, n, c]));
            continue;
        }
        let kv_views: Vec<Tensor<T>> = neighbors
            .iter()
            .map(|&u| x.narrow(1, u, 1)?.reshape(&[t, n, c]))
            .collect::<mvd_tensor::Result<_>>()?;
        let kv_refs: Vec<&Tensor<T>> = kv_views.iter().collect();
        let kv = Tensor::concat(&kv_refs, 1)?;
        let att = attend(
            &params.norm(&q_view)?,
            &params.norm(&kv)?,
            params,
            cfg.num_heads,
        )?;
        contributions.push(att.reshape(&[t, 1, n, c])?);
    }
    let refs: Vec<&Tensor<T>> = contributions.iter().collect();
    Ok(x.add(&Tensor::concat(&refs, 1)?)?)
}

/// Each spatial location attends over its own trajectory across frames; no
/// spatial or cross-view mixing. `temporal_pos` rows, when given, are added
/// to the attention branch (not the residual path) before normalization.
pub fn cross_frame_attention<T: Elem>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    cfg: &AttentionConfig,
    temporal_pos: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    check_tokens(x, cfg, "cross_frame_attention")?;
    let (t, v, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let tracks = x
        .transpose(0, 1)? // (V, T, N, c)
        .transpose(1, 2)? // (V, N, T, c)
        .reshape(&[v * n, t, c])?;
    let branch_in = match temporal_pos {
        None => tracks,
        Some(pos) => {
            if pos.shape().len() != 2 || pos.shape()[0] < t || pos.shape()[1] != c {
                return Err(ModelError::Dim {
                    op: "cross_frame_attention",
                    reason: format!(
                        "temporal encoding shape {:?} cannot cover {t} frames of width {c}",
                        pos.shape()
                    ),
                });
            }
            let rows = pos.narrow(0, 0, t)?.reshape(&[1, t, c])?;
            tracks.add(&rows.repeat_axis(0, v * n)?)?
        }
    };
    let normed = params.norm(&branch_in)?;
    let att = attend(&normed, &normed, params, cfg.num_heads)?;
    let back = att
        .reshape(&[v, n, t, c])?
        .transpose(1, 2)? // (V, T, N, c)
        .transpose(0, 1)?; // (T, V, N, c)
    Ok(x.add(&back)?)
}

/// Pairwise visibility rules for the exhaustive oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRule {
    /// Attend only within the same (frame, view) panel.
    SameFrameView,
    /// Attend only to adjacent views of the same frame.
    AdjacentViews,
    /// Attend only to the same (view, spatial) location across frames.
    SameLocation,
    /// No masking.
    AllPairs,
    /// Every pair masked; the block degenerates to the residual identity.
    NothingAllowed,
}

/// Hard cap on oracle tokens; the full attention matrix is materialized.
pub const ORACLE_TOKEN_LIMIT: usize = 4096;

/// Brute-force 4D attention: one softmax over all T*V*N tokens with the
/// mask rule applied as large negative logits, sharing `params` with the
/// decomposed block under test. Rows whose every key is masked contribute
/// zero, so `NothingAllowed` reproduces the residual identity.
pub fn full_4d_attention_oracle<T: Elem>(
    x: &Tensor<T>,
    params: &AttentionParams<T>,
    cfg: &AttentionConfig,
    rule: MaskRule,
) -> Result<Tensor<T>> {
    check_tokens(x, cfg, "full_4d_attention_oracle")?;
    let (t, v, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let m = t * v * n;
    if m > ORACLE_TOKEN_LIMIT {
        return Err(ModelError::Resource(format!(
            "oracle asked to materialize {m}x{m} attention; limit is {ORACLE_TOKEN_LIMIT} tokens"
        )));
    }

    let coord = |i: usize| {
        let ti = i / (v * n);
        let vi = (i / n) % v;
        let ni = i % n;
        (ti, vi, ni)
    };
    let allowed = |i: usize, j: usize| {
        let (ti, vi, ni) = coord(i);
        let (tj, vj, nj) = coord(j);
        match rule {
            MaskRule::SameFrameView => ti == tj && vi == vj,
            MaskRule::AdjacentViews => ti == tj && cfg.view_adjacency.are_neighbors(vi, vj, v),
            MaskRule::SameLocation => vi == vj && ni == nj,
            MaskRule::AllPairs => true,
            MaskRule::NothingAllowed => false,
        }
    };

    let mut mask = vec![T::from_f64(0.0); m * m];
    let mut row_live = vec![T::from_f64(0.0); m];
    for i in 0..m {
        let mut any = false;
        for j in 0..m {
            if allowed(i, j) {
                any = true;
            } else {
                mask[i * m + j] = T::from_f64(MASKED_LOGIT);
            }
        }
        if any {
            row_live[i] = T::from_f64(1.0);
        }
    }
    let mask = Tensor::from_vec(mask, &[m, m])?;
    let row_live = Tensor::from_vec(row_live, &[m, 1])?;

    let heads = cfg.num_heads;
    let tokens = x.reshape(&[1, m, c])?;
    let normed = params.norm(&tokens)?;
    let q = split_heads(&normed.matmul(&params.wq)?, heads)?;
    let k = split_heads(&normed.matmul(&params.wk)?, heads)?;
    let val = split_heads(&normed.matmul(&params.wv)?, heads)?;
    let scale = 1.0 / (c / heads) as f64;
    let scale = scale.sqrt();
    let scores = q
        .matmul(&k.transpose(1, 2)?)?
        .scale(scale)
        .add(&mask.reshape(&[1, m, m])?.repeat_axis(0, heads)?)?;
    let attn = scores.softmax_lastdim()?;
    let mixed = merge_heads(&attn.matmul(&val)?, heads)?;
    // A fully masked row softmaxes to uniform weights; zero it explicitly so
    // such tokens contribute nothing.
    let live = row_live.reshape(&[1, m, 1])?.repeat_axis(2, c)?;
    let gated = mixed.mul(&live)?;
    let out = gated.matmul(&params.wo)?;
    Ok(x.add(&out.reshape(&[t, v, n, c])?)?)
}

/// Number of attention-logit elements evaluated for one pass of the
/// decomposed blocks versus the exhaustive scheme. The decomposed count is
/// what makes 4D attention tractable: it grows linearly in T and V where
/// the full matrix grows quadratically.
pub fn attention_logit_cost(
    frames: usize,
    views: usize,
    tokens: usize,
    adjacency: ViewAdjacency,
) -> (usize, usize) {
    let intra = frames * views * tokens * tokens;
    let cross_view: usize = (0..views)
        .map(|v| frames * tokens * adjacency.neighbors(v, views).len() * tokens)
        .sum();
    let cross_frame = views * tokens * frames * frames;
    let full = (frames * views * tokens).pow(2);
    (intra + cross_view + cross_frame, full)
}
