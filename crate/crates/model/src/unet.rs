//! The miniature UNet denoiser assembled from the decomposed attention
//! blocks.
//!
//! Latents enter as (T, V, C, h, w); convolutions and normalization treat
//! T*V as a batch axis, attention re-factors tokens as (T, V, h*w, c). The
//! final output convolution is zero-initialized, so a fresh network
//! predicts exactly zero noise.

use mvd_tensor::rng::DetRng;
use mvd_tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};

use crate::attention::{
    cross_frame_attention, cross_view_attention, intra_view_attention, AttentionConfig,
    AttentionParams, ViewAdjacency,
};
use crate::error::{ModelError, Result};

const NORM_EPS: f64 = 1e-5;

/// Whether temporal modules participate in a forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Frames are processed independently; cross-frame blocks are bypassed.
    Image,
    /// The full decomposed 4D path, including cross-frame attention.
    Video,
}

/// Shape and wiring of the denoiser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    pub base_channels: usize,
    pub channel_mults: Vec<usize>,
    pub blocks_per_level: usize,
    pub context_dim: usize,
    pub num_heads: usize,
    pub view_adjacency: ViewAdjacency,
    pub enable_cross_view: bool,
    /// When true the network owns cross-frame blocks and temporal position
    /// rows; a stage-1 image network has neither.
    pub temporal: bool,
    /// Capacity of the temporal position table; forward passes accept any
    /// T up to this.
    pub max_frames: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig {
            in_channels: 48,
            out_channels: 48,
            base_channels: 64,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            context_dim: 64,
            num_heads: 4,
            view_adjacency: ViewAdjacency::Cyclic,
            enable_cross_view: true,
            temporal: false,
            max_frames: 8,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channel_mults.is_empty() {
            return Err(ModelError::Config("channel_mults must be non-empty".into()));
        }
        if self.blocks_per_level == 0 {
            return Err(ModelError::Config("blocks_per_level must be positive".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.base_channels == 0 {
            return Err(ModelError::Config("channel counts must be positive".into()));
        }
        if self.temporal && self.max_frames == 0 {
            return Err(ModelError::Config(
                "temporal networks need max_frames >= 1".into(),
            ));
        }
        for &mult in &self.channel_mults {
            let c = self.base_channels * mult;
            if self.num_heads == 0 || c % self.num_heads != 0 {
                return Err(ModelError::Config(format!(
                    "level width {c} is not divisible by num_heads {}",
                    self.num_heads
                )));
            }
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_mults.len()
    }

    fn level_channels(&self, level: usize) -> usize {
        self.base_channels * self.channel_mults[level]
    }

    fn time_dim(&self) -> usize {
        self.base_channels * 4
    }

    fn attention_config(&self, embed_dim: usize) -> AttentionConfig {
        AttentionConfig {
            embed_dim,
            num_heads: self.num_heads,
            view_adjacency: self.view_adjacency,
            enable_cross_view: self.enable_cross_view,
            enable_cross_frame: self.temporal,
        }
    }
}

/// Sinusoidal embedding of a step index, the usual half-sine/half-cosine
/// layout with geometrically spaced frequencies.
pub fn timestep_embedding<T: Elem>(t: usize, dim: usize) -> Result<Tensor<T>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(ModelError::Config(format!(
            "timestep embedding dim must be positive and even, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut values = vec![T::from_f64(0.0); dim];
    for i in 0..half {
        let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
        let angle = t as f64 * freq;
        values[i] = T::from_f64(angle.sin());
        values[half + i] = T::from_f64(angle.cos());
    }
    Ok(Tensor::from_vec(values, &[1, dim])?)
}

#[derive(Debug, Clone)]
pub(crate) struct Conv<T: Elem> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
}

impl<T: Elem> Conv<T> {
    pub fn init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        let fan_in = (c_in * kernel * kernel) as f64;
        Ok(Conv {
            weight: rng.normal_param(&[c_out, c_in, kernel, kernel], (2.0 / fan_in).sqrt())?,
            bias: Tensor::zeros(&[c_out]).into_param(),
            stride,
        })
    }

    pub fn zero(c_in: usize, c_out: usize, kernel: usize) -> Self {
        Conv {
            weight: Tensor::zeros(&[c_out, c_in, kernel, kernel]).into_param(),
            bias: Tensor::zeros(&[c_out]).into_param(),
            stride: 1,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.conv2d(&self.weight, &self.bias, self.stride)?)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
struct Linear<T: Elem> {
    weight: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Elem> Linear<T> {
    fn init(d_in: usize, d_out: usize, rng: &mut DetRng) -> Result<Self> {
        Ok(Linear {
            weight: rng.normal_param(&[d_in, d_out], 1.0 / (d_in as f64).sqrt())?,
            bias: Tensor::zeros(&[d_out]).into_param(),
        })
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.linear(&self.weight, &self.bias)?)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

#[derive(Debug, Clone)]
struct NormParams<T: Elem> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
}

impl<T: Elem> NormParams<T> {
    fn init(c: usize) -> Self {
        NormParams {
            gamma: Tensor::full(&[c], T::from_f64(1.0)).into_param(),
            beta: Tensor::zeros(&[c]).into_param(),
        }
    }

    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(x.group_norm(&self.gamma, &self.beta, 1, NORM_EPS)?)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.gamma"), &mut self.gamma);
        f(&format!("{prefix}.beta"), &mut self.beta);
    }
}

/// Convolutional residual block with a per-channel timestep shift between
/// its two convolutions.
#[derive(Debug, Clone)]
pub(crate) struct ResBlock<T: Elem> {
    norm1: NormParams<T>,
    conv1: Conv<T>,
    time_proj: Linear<T>,
    norm2: NormParams<T>,
    conv2: Conv<T>,
    skip: Option<Conv<T>>,
}

impl<T: Elem> ResBlock<T> {
    fn init(c_in: usize, c_out: usize, time_dim: usize, rng: &mut DetRng) -> Result<Self> {
        Ok(ResBlock {
            norm1: NormParams::init(c_in),
            conv1: Conv::init(c_in, c_out, 3, 1, rng)?,
            time_proj: Linear::init(time_dim, c_out, rng)?,
            norm2: NormParams::init(c_out),
            conv2: Conv::init(c_out, c_out, 3, 1, rng)?,
            skip: if c_in == c_out {
                None
            } else {
                Some(Conv::init(c_in, c_out, 1, 1, rng)?)
            },
        })
    }

    fn forward(&self, x: &Tensor<T>, time_emb: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.conv1.forward(&self.norm1.forward(x)?.silu())?;
        let shift = self.time_proj.forward(&time_emb.silu())?;
        let shift = shift.reshape(&[shift.numel()])?;
        let h = h.add_bias(&shift, 1)?;
        let h = self.conv2.forward(&self.norm2.forward(&h)?.silu())?;
        let skip = match &self.skip {
            None => x.clone(),
            Some(conv) => conv.forward(x)?,
        };
        Ok(skip.add(&h)?)
    }

    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.norm1.visit_params(&format!("{prefix}.norm1"), f);
        self.conv1.visit_params(&format!("{prefix}.conv1"), f);
        self.time_proj.visit_params(&format!("{prefix}.time_proj"), f);
        self.norm2.visit_params(&format!("{prefix}.norm2"), f);
        self.conv2.visit_params(&format!("{prefix}.conv2"), f);
        if let Some(skip) = &mut self.skip {
            skip.visit_params(&format!("{prefix}.skip"), f);
        }
    }
}

/// One transformer stack: intra-view, optional cross-view, optional
/// cross-frame (with learned temporal positions), and text cross-attention,
/// each residual.
#[derive(Debug, Clone)]
pub(crate) struct TransformerUnit<T: Elem> {
    cfg: AttentionConfig,
    intra: AttentionParams<T>,
    cross_view: Option<AttentionParams<T>>,
    cross_frame: Option<AttentionParams<T>>,
    temporal_pos: Option<Tensor<T>>,
    text: AttentionParams<T>,
}

impl<T: Elem> TransformerUnit<T> {
    fn init(
        embed_dim: usize,
        context_dim: usize,
        max_frames: usize,
        cfg: AttentionConfig,
        rng: &mut DetRng,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(TransformerUnit {
            cfg,
            intra: AttentionParams::init(embed_dim, embed_dim, rng)?,
            cross_view: if cfg.enable_cross_view {
                Some(AttentionParams::init(embed_dim, embed_dim, rng)?)
            } else {
                None
            },
            cross_frame: if cfg.enable_cross_frame {
                Some(AttentionParams::init(embed_dim, embed_dim, rng)?)
            } else {
                None
            },
            temporal_pos: if cfg.enable_cross_frame {
                Some(rng.normal_param(&[max_frames, embed_dim], 0.02)?)
            } else {
                None
            },
            text: AttentionParams::init(embed_dim, context_dim, rng)?,
        })
    }

    /// Copy of this unit with its temporal members dropped, for the control
    /// branch's frame-wise encoder.
    pub fn without_temporal(&self) -> Self {
        let mut cfg = self.cfg;
        cfg.enable_cross_frame = false;
        TransformerUnit {
            cfg,
            intra: self.intra.clone(),
            cross_view: self.cross_view.clone(),
            cross_frame: None,
            temporal_pos: None,
            text: self.text.clone(),
        }
    }

    /// `x` is (T*V, C, H, W) with the frame/view factorization given by
    /// `frames`; `context` is (n_ctx, context_dim).
    pub fn forward(
        &self,
        x: &Tensor<T>,
        frames: usize,
        context: &Tensor<T>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        let (tv, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let views = tv / frames;
        let n = h * w;
        let tokens = x
            .reshape(&[frames, views, c, n])?
            .transpose(2, 3)?; // (T, V, N, c)

        let mut y = intra_view_attention(&tokens, &self.intra, &self.cfg)?;
        if let Some(params) = &self.cross_view {
            y = cross_view_attention(&y, params, &self.cfg)?;
        }
        if mode == Mode::Video {
            if let Some(params) = &self.cross_frame {
                y = cross_frame_attention(&y, params, &self.cfg, self.temporal_pos.as_ref())?;
            }
        }
        y = self.text_attention(&y, context)?;

        Ok(y.transpose(2, 3)?.reshape(&[tv, c, h, w])?)
    }

    fn text_attention(&self, tokens: &Tensor<T>, context: &Tensor<T>) -> Result<Tensor<T>> {
        if context.shape().len() != 2 {
            return Err(ModelError::Dim {
                op: "text_attention",
                reason: format!("context must be (n_tokens, dim), got {:?}", context.shape()),
            });
        }
        let (t, v, n, c) = (
            tokens.shape()[0],
            tokens.shape()[1],
            tokens.shape()[2],
            tokens.shape()[3],
        );
        let groups = tokens.reshape(&[t * v, n, c])?;
        let normed = self.text.norm(&groups)?;
        let (n_ctx, ctx_dim) = (context.shape()[0], context.shape()[1]);
        let kv = context
            .reshape(&[1, n_ctx, ctx_dim])?
            .repeat_axis(0, t * v)?;
        let att = crate::attention::attend(&normed, &kv, &self.text, self.cfg.num_heads)?;
        Ok(tokens.add(&att.reshape(&[t, v, n, c])?)?)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.intra.visit_params(&format!("{prefix}.intra"), f);
        if let Some(p) = &mut self.cross_view {
            p.visit_params(&format!("{prefix}.cross_view"), f);
        }
        if let Some(p) = &mut self.cross_frame {
            p.visit_params(&format!("{prefix}.cross_frame"), f);
        }
        if let Some(pos) = &mut self.temporal_pos {
            f(&format!("{prefix}.temporal_pos"), pos);
        }
        self.text.visit_params(&format!("{prefix}.text"), f);
    }
}

/// Per-resolution features from the control branch, added at the decoder
/// fusion points (one per encoder level, plus the middle block).
#[derive(Debug, Clone)]
pub struct ControlFeatures<T: Elem> {
    pub levels: Vec<Tensor<T>>,
    pub mid: Tensor<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct EncoderLevel<T: Elem> {
    pub blocks: Vec<(ResBlock<T>, TransformerUnit<T>)>,
    pub down: Option<Conv<T>>,
}

impl<T: Elem> EncoderLevel<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, (res, attn)) in self.blocks.iter_mut().enumerate() {
            res.visit_params(&format!("{prefix}.block{i}.res"), f);
            attn.visit_params(&format!("{prefix}.block{i}.attn"), f);
        }
        if let Some(down) = &mut self.down {
            down.visit_params(&format!("{prefix}.down"), f);
        }
    }
}

#[derive(Debug, Clone)]
struct DecoderLevel<T: Elem> {
    blocks: Vec<(ResBlock<T>, TransformerUnit<T>)>,
    up: Option<Conv<T>>,
}

impl<T: Elem> DecoderLevel<T> {
    fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, (res, attn)) in self.blocks.iter_mut().enumerate() {
            res.visit_params(&format!("{prefix}.block{i}.res"), f);
            attn.visit_params(&format!("{prefix}.block{i}.attn"), f);
        }
        if let Some(up) = &mut self.up {
            up.visit_params(&format!("{prefix}.up"), f);
        }
    }
}

/// The denoiser: encoder levels with downsampling, a middle residual block,
/// decoder levels with skip concatenation and upsampling, and a
/// zero-initialized output head.
#[derive(Debug, Clone)]
pub struct UNet<T: Elem> {
    cfg: UNetConfig,
    time_in: Linear<T>,
    time_out: Linear<T>,
    conv_in: Conv<T>,
    enc: Vec<EncoderLevel<T>>,
    mid: ResBlock<T>,
    dec: Vec<DecoderLevel<T>>,
    head_norm: NormParams<T>,
    head: Conv<T>,
}

impl<T: Elem> UNet<T> {
    pub fn init(cfg: UNetConfig, rng: &mut DetRng) -> Result<Self> {
        cfg.validate()?;
        let time_dim = cfg.time_dim();
        let time_in = Linear::init(cfg.base_channels, time_dim, rng)?;
        let time_out = Linear::init(time_dim, time_dim, rng)?;
        let conv_in = Conv::init(cfg.in_channels, cfg.level_channels(0), 3, 1, rng)?;

        let mut enc = Vec::new();
        let mut ch = cfg.level_channels(0);
        for level in 0..cfg.levels() {
            let target = cfg.level_channels(level);
            let mut blocks = Vec::new();
            for _ in 0..cfg.blocks_per_level {
                let res = ResBlock::init(ch, target, time_dim, rng)?;
                let attn = TransformerUnit::init(
                    target,
                    cfg.context_dim,
                    cfg.max_frames,
                    cfg.attention_config(target),
                    rng,
                )?;
                blocks.push((res, attn));
                ch = target;
            }
            let down = if level + 1 < cfg.levels() {
                Some(Conv::init(ch, ch, 3, 2, rng)?)
            } else {
                None
            };
            enc.push(EncoderLevel { blocks, down });
        }

        let mid = ResBlock::init(ch, ch, time_dim, rng)?;

        let mut dec = Vec::new();
        for level in (0..cfg.levels()).rev() {
            let target = cfg.level_channels(level);
            let mut blocks = Vec::new();
            for b in 0..cfg.blocks_per_level {
                let c_in = if b == 0 { ch + target } else { target };
                let res = ResBlock::init(c_in, target, time_dim, rng)?;
                let attn = TransformerUnit::init(
                    target,
                    cfg.context_dim,
                    cfg.max_frames,
                    cfg.attention_config(target),
                    rng,
                )?;
                blocks.push((res, attn));
                ch = target;
            }
            let up = if level > 0 {
                Some(Conv::init(ch, cfg.level_channels(level - 1), 3, 1, rng)?)
            } else {
                None
            };
            if up.is_some() {
                ch = cfg.level_channels(level - 1);
            }
            dec.push(DecoderLevel { blocks, up });
        }

        let head_norm = NormParams::init(cfg.level_channels(0));
        let head = Conv::zero(cfg.level_channels(0), cfg.out_channels, 3);

        Ok(UNet {
            cfg,
            time_in,
            time_out,
            conv_in,
            enc,
            mid,
            dec,
            head_norm,
            head,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    fn time_embedding(&self, t: usize) -> Result<Tensor<T>> {
        let sinus = timestep_embedding::<T>(t, self.cfg.base_channels)?;
        self.time_out.forward(&self.time_in.forward(&sinus)?.silu())
    }

    /// Encoder half only, shared with the control branch: returns the skip
    /// tensor of every level plus the middle-block output.
    pub(crate) fn encode(
        &self,
        x: &Tensor<T>,
        frames: usize,
        time_emb: &Tensor<T>,
        context: &Tensor<T>,
        mode: Mode,
    ) -> Result<(Vec<Tensor<T>>, Tensor<T>)> {
        let mut h = self.conv_in.forward(x)?;
        let mut skips = Vec::with_capacity(self.cfg.levels());
        for level in &self.enc {
            for (res, attn) in &level.blocks {
                h = res.forward(&h, time_emb)?;
                h = attn.forward(&h, frames, context, mode)?;
            }
            skips.push(h.clone());
            if let Some(down) = &level.down {
                h = down.forward(&h)?;
            }
        }
        let mid = self.mid.forward(&h, time_emb)?;
        Ok((skips, mid))
    }

    /// Full denoising pass. `z` is (T, V, C_in, h, w); the result has
    /// `out_channels` in place of `C_in`.
    pub fn forward(
        &self,
        z: &Tensor<T>,
        t: usize,
        context: &Tensor<T>,
        control: Option<&ControlFeatures<T>>,
        mode: Mode,
    ) -> Result<Tensor<T>> {
        if z.shape().len() != 5 {
            return Err(ModelError::Dim {
                op: "unet_forward",
                reason: format!("expected (T, V, C, h, w), got {:?}", z.shape()),
            });
        }
        let (frames, views, c, h, w) =
            (z.shape()[0], z.shape()[1], z.shape()[2], z.shape()[3], z.shape()[4]);
        if c != self.cfg.in_channels {
            return Err(ModelError::Dim {
                op: "unet_forward",
                reason: format!("input has {c} channels, net expects {}", self.cfg.in_channels),
            });
        }
        let down_factor = 1usize << (self.cfg.levels() - 1);
        if h % down_factor != 0 || w % down_factor != 0 {
            return Err(ModelError::Dim {
                op: "unet_forward",
                reason: format!("spatial dims {h}x{w} not divisible by {down_factor}"),
            });
        }
        if mode == Mode::Video {
            if !self.cfg.temporal {
                return Err(ModelError::Contract {
                    op: "unet_forward",
                    reason: "video mode requested on a network without temporal modules".into(),
                });
            }
            if frames > self.cfg.max_frames {
                return Err(ModelError::Contract {
                    op: "unet_forward",
                    reason: format!(
                        "{frames} frames exceed the temporal position capacity {}",
                        self.cfg.max_frames
                    ),
                });
            }
        }
        if let Some(features) = control {
            if features.levels.len() != self.cfg.levels() {
                return Err(ModelError::Contract {
                    op: "unet_forward",
                    reason: format!(
                        "control features cover {} levels, net has {}",
                        features.levels.len(),
                        self.cfg.levels()
                    ),
                });
            }
        }

        let time_emb = self.time_embedding(t)?;
        let x = z.reshape(&[frames * views, c, h, w])?;
        let (mut skips, mut mid) = self.encode(&x, frames, &time_emb, context, mode)?;

        if let Some(features) = control {
            for (skip, extra) in skips.iter_mut().zip(&features.levels) {
                *skip = skip.add(extra)?;
            }
            mid = mid.add(&features.mid)?;
        }

        let mut y = mid;
        for (dec_index, level) in self.dec.iter().enumerate() {
            let skip = &skips[self.cfg.levels() - 1 - dec_index];
            y = Tensor::concat(&[&y, skip], 1)?;
            for (res, attn) in &level.blocks {
                y = res.forward(&y, &time_emb)?;
                y = attn.forward(&y, frames, context, mode)?;
            }
            if let Some(up) = &level.up {
                y = up.forward(&y.upsample_nearest_2x()?)?;
            }
        }

        let out = self.head.forward(&self.head_norm.forward(&y)?.silu())?;
        Ok(out.reshape(&[frames, views, self.cfg.out_channels, h, w])?)
    }

    /// Frame-wise clone for the control branch: temporal members are
    /// removed from every transformer unit and the config stops
    /// advertising them.
    pub(crate) fn clone_without_temporal(&self) -> Self {
        let mut copy = self.clone();
        copy.cfg.temporal = false;
        for level in &mut copy.enc {
            for (_, attn) in &mut level.blocks {
                *attn = attn.without_temporal();
            }
        }
        for level in &mut copy.dec {
            for (_, attn) in &mut level.blocks {
                *attn = attn.without_temporal();
            }
        }
        copy
    }

    pub(crate) fn time_embedding_for(&self, t: usize) -> Result<Tensor<T>> {
        self.time_embedding(t)
    }

    /// Visits only the parameters the control branch exercises: the time
    /// MLP, input convolution, encoder levels, and middle block.
    pub(crate) fn visit_encoder_params(
        &mut self,
        prefix: &str,
        f: &mut dyn FnMut(&str, &mut Tensor<T>),
    ) {
        self.time_in.visit_params(&format!("{prefix}.time_in"), f);
        self.time_out.visit_params(&format!("{prefix}.time_out"), f);
        self.conv_in.visit_params(&format!("{prefix}.conv_in"), f);
        for (i, level) in self.enc.iter_mut().enumerate() {
            level.visit_params(&format!("{prefix}.enc{i}"), f);
        }
        self.mid.visit_params(&format!("{prefix}.mid"), f);
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.time_in.visit_params(&format!("{prefix}.time_in"), f);
        self.time_out.visit_params(&format!("{prefix}.time_out"), f);
        self.conv_in.visit_params(&format!("{prefix}.conv_in"), f);
        for (i, level) in self.enc.iter_mut().enumerate() {
            level.visit_params(&format!("{prefix}.enc{i}"), f);
        }
        self.mid.visit_params(&format!("{prefix}.mid"), f);
        for (i, level) in self.dec.iter_mut().enumerate() {
            level.visit_params(&format!("{prefix}.dec{i}"), f);
        }
        self.head_norm.visit_params(&format!("{prefix}.head_norm"), f);
        self.head.visit_params(&format!("{prefix}.head"), f);
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params("unet", &mut |_, t| count += t.numel());
        count
    }
}
