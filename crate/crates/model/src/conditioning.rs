//! Conditioning inputs: coarse scene attributes, the projected-layout
//! control images, and the first-frame image condition used by the second
//! generation stage.

use mvd_tensor::rng::DetRng;
use mvd_tensor::{Elem, Tensor};

use crate::error::{ModelError, Result};
use crate::unet::{ControlFeatures, Mode, UNet};

pub const WEATHER_VALUES: &[&str] = &["unspecified", "sunny", "rain", "snow"];
pub const TIME_VALUES: &[&str] = &["unspecified", "day", "night"];
pub const SCENE_VALUES: &[&str] = &["unspecified", "urban", "suburban"];

/// Learned embedding rows for the three coarse attribute axes. Row 0 of
/// each table is the unspecified value.
#[derive(Debug, Clone)]
pub struct AttributeVocab<T: Elem> {
    pub weather: Tensor<T>,
    pub time_of_day: Tensor<T>,
    pub scene: Tensor<T>,
}

fn lookup(axis: &'static str, valid: &'static [&'static str], value: &str) -> Result<usize> {
    valid
        .iter()
        .position(|v| *v == value)
        .ok_or(ModelError::Vocab {
            axis,
            value: value.to_string(),
            valid,
        })
}

impl<T: Elem> AttributeVocab<T> {
    pub fn init(context_dim: usize, rng: &mut DetRng) -> Result<Self> {
        let std = 1.0 / (context_dim as f64).sqrt();
        Ok(AttributeVocab {
            weather: rng.normal_param(&[WEATHER_VALUES.len(), context_dim], std)?,
            time_of_day: rng.normal_param(&[TIME_VALUES.len(), context_dim], std)?,
            scene: rng.normal_param(&[SCENE_VALUES.len(), context_dim], std)?,
        })
    }

    /// Three context tokens, one per attribute axis, shaped (3, context_dim).
    /// Unknown values are rejected with the list of accepted ones.
    pub fn embed(&self, weather: &str, time_of_day: &str, scene: &str) -> Result<Tensor<T>> {
        let w = self.weather.gather_rows(&[lookup("weather", WEATHER_VALUES, weather)?])?;
        let t = self
            .time_of_day
            .gather_rows(&[lookup("time_of_day", TIME_VALUES, time_of_day)?])?;
        let s = self.scene.gather_rows(&[lookup("scene", SCENE_VALUES, scene)?])?;
        Ok(Tensor::concat(&[&w, &t, &s], 0)?)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        f(&format!("{prefix}.weather"), &mut self.weather);
        f(&format!("{prefix}.time_of_day"), &mut self.time_of_day);
        f(&format!("{prefix}.scene"), &mut self.scene);
    }
}

/// Everything a denoising step is conditioned on.
#[derive(Debug, Clone)]
pub struct ConditionBundle<T: Elem> {
    /// (n_tokens, context_dim) text/attribute tokens for cross-attention.
    pub context_tokens: Tensor<T>,
    /// (T, V, control_channels, H, W) projected layout frames at pixel
    /// resolution, present when layout control is active.
    pub control_images: Option<Tensor<T>>,
    /// (V, C, h, w) clean latent of the conditioning frame, present in the
    /// second stage.
    pub image_condition: Option<Tensor<T>>,
}

/// Concatenates the conditioning frame onto frame 0 along channels and
/// zero-pads the remaining frames, doubling the channel count. The network
/// can tell real conditioning apart from padding by frame position alone.
pub fn fuse_image_condition<T: Elem>(
    z: &Tensor<T>,
    cond: &Tensor<T>,
) -> Result<Tensor<T>> {
    fuse_image_conditions(z, &[cond.clone()])
}

/// Multi-frame variant used by long-horizon splicing: conditioning latents
/// occupy the first `conds.len()` frames in order.
pub fn fuse_image_conditions<T: Elem>(
    z: &Tensor<T>,
    conds: &[Tensor<T>],
) -> Result<Tensor<T>> {
    if z.shape().len() != 5 {
        return Err(ModelError::Dim {
            op: "fuse_image_condition",
            reason: format!("latent must be (T, V, C, h, w), got {:?}", z.shape()),
        });
    }
    let (frames, views, c, h, w) =
        (z.shape()[0], z.shape()[1], z.shape()[2], z.shape()[3], z.shape()[4]);
    if conds.is_empty() || conds.len() > frames {
        return Err(ModelError::Contract {
            op: "fuse_image_condition",
            reason: format!(
                "need between 1 and {frames} conditioning frames, got {}",
                conds.len()
            ),
        });
    }
    let frame_shape = [1, views, c, h, w];
    let mut cond_frames = Vec::with_capacity(frames);
    for (i, cond) in conds.iter().enumerate() {
        if cond.shape() != [views, c, h, w] {
            return Err(ModelError::Dim {
                op: "fuse_image_condition",
                reason: format!(
                    "conditioning frame {i} has shape {:?}, latent frames are {:?}",
                    cond.shape(),
                    &[views, c, h, w]
                ),
            });
        }
        cond_frames.push(cond.reshape(&frame_shape)?);
    }
    if conds.len() < frames {
        cond_frames.push(Tensor::zeros(&[frames - conds.len(), views, c, h, w]));
    }
    let refs: Vec<&Tensor<T>> = cond_frames.iter().collect();
    let stacked = Tensor::concat(&refs, 0)?;
    Ok(Tensor::concat(&[z, &stacked], 2)?)
}

/// Strided convolution stack that brings pixel-resolution control images
/// down to the latent grid and up to the denoiser's input width.
#[derive(Debug, Clone)]
pub struct ControlEmbed<T: Elem> {
    downs: Vec<crate::unet::Conv<T>>,
    out: crate::unet::Conv<T>,
}

impl<T: Elem> ControlEmbed<T> {
    pub fn init(
        control_channels: usize,
        downsample: usize,
        out_channels: usize,
        embed_channels: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        if downsample == 0 || !downsample.is_power_of_two() {
            return Err(ModelError::Config(format!(
                "control downsample must be a power of two, got {downsample}"
            )));
        }
        let steps = downsample.trailing_zeros() as usize;
        let mut downs = Vec::with_capacity(steps);
        let mut c = control_channels;
        for i in 0..steps {
            let c_next = embed_channels * (i + 1);
            downs.push(crate::unet::Conv::init(c, c_next, 3, 2, rng)?);
            c = c_next;
        }
        Ok(ControlEmbed {
            downs,
            out: crate::unet::Conv::init(c, out_channels, 1, 1, rng)?,
        })
    }

    /// `x` is (B, control_channels, H, W) at pixel resolution; the result is
    /// (B, out_channels, H / downsample, W / downsample).
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut h = x.clone();
        for down in &self.downs {
            h = down.forward(&h)?.silu();
        }
        self.out.forward(&h)
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        for (i, down) in self.downs.iter_mut().enumerate() {
            down.visit_params(&format!("{prefix}.down{i}"), f);
        }
        self.out.visit_params(&format!("{prefix}.out"), f);
    }
}

/// Trainable copy of the denoiser's encoder fed with control features,
/// fused back through zero-initialized projections. At initialization the
/// branch contributes exact zeros, leaving the base network untouched.
#[derive(Debug, Clone)]
pub struct ControlBranch<T: Elem> {
    embed: ControlEmbed<T>,
    encoder: UNet<T>,
    fuse_levels: Vec<crate::unet::Conv<T>>,
    fuse_mid: crate::unet::Conv<T>,
}

impl<T: Elem> ControlBranch<T> {
    /// Copies the encoder half of `base` and attaches the control embedding
    /// plus zero fusion convolutions.
    pub fn from_unet(
        base: &UNet<T>,
        control_channels: usize,
        downsample: usize,
        embed_channels: usize,
        rng: &mut DetRng,
    ) -> Result<Self> {
        let cfg = base.config().clone();
        let embed = ControlEmbed::init(
            control_channels,
            downsample,
            cfg.in_channels,
            embed_channels,
            rng,
        )?;
        let encoder = base.clone_without_temporal();
        let mut fuse_levels = Vec::with_capacity(cfg.levels());
        let mut ch = cfg.base_channels * cfg.channel_mults[0];
        for &mult in &cfg.channel_mults {
            ch = cfg.base_channels * mult;
            fuse_levels.push(crate::unet::Conv::zero(ch, ch, 1));
        }
        let fuse_mid = crate::unet::Conv::zero(ch, ch, 1);
        Ok(ControlBranch {
            embed,
            encoder,
            fuse_levels,
            fuse_mid,
        })
    }

    /// `x` is the denoiser input (T*V, C_in, h, w) and `control` the raw
    /// control images (T, V, control_channels, H, W).
    pub fn forward(
        &self,
        x: &Tensor<T>,
        control: &Tensor<T>,
        frames: usize,
        t: usize,
        context: &Tensor<T>,
    ) -> Result<ControlFeatures<T>> {
        if control.shape().len() != 5 {
            return Err(ModelError::Dim {
                op: "control_branch",
                reason: format!(
                    "control images must be (T, V, C, H, W), got {:?}",
                    control.shape()
                ),
            });
        }
        let (ct, cv, cc, ch, cw) = (
            control.shape()[0],
            control.shape()[1],
            control.shape()[2],
            control.shape()[3],
            control.shape()[4],
        );
        let flat = control.reshape(&[ct * cv, cc, ch, cw])?;
        let embedded = self.embed.forward(&flat)?;
        if embedded.shape() != x.shape() {
            return Err(ModelError::Contract {
                op: "control_branch",
                reason: format!(
                    "embedded control {:?} does not match denoiser input {:?}",
                    embedded.shape(),
                    x.shape()
                ),
            });
        }
        let fused = x.add(&embedded)?;
        let time_emb = self.encoder.time_embedding_for(t)?;
        let (skips, mid) = self
            .encoder
            .encode(&fused, frames, &time_emb, context, Mode::Image)?;
        let mut levels = Vec::with_capacity(skips.len());
        for (skip, fuse) in skips.iter().zip(&self.fuse_levels) {
            levels.push(fuse.forward(skip)?);
        }
        Ok(ControlFeatures {
            levels,
            mid: self.fuse_mid.forward(&mid)?,
        })
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.embed.visit_params(&format!("{prefix}.embed"), f);
        self.encoder.visit_encoder_params(&format!("{prefix}.copy"), f);
        for (i, fuse) in self.fuse_levels.iter_mut().enumerate() {
            fuse.visit_params(&format!("{prefix}.fuse{i}"), f);
        }
        self.fuse_mid.visit_params(&format!("{prefix}.fuse_mid"), f);
    }
}

/// Channel-concatenation alternative to the trainable branch: embedded
/// control features are appended to the latent channels.
pub fn concat_control<T: Elem>(
    z: &Tensor<T>,
    embedded_control: &Tensor<T>,
) -> Result<Tensor<T>> {
    if z.shape().len() != 5 || embedded_control.shape().len() != 5 {
        return Err(ModelError::Dim {
            op: "concat_control",
            reason: format!(
                "expected rank-5 latent and control, got {:?} and {:?}",
                z.shape(),
                embedded_control.shape()
            ),
        });
    }
    for axis in [0usize, 1, 3, 4] {
        if z.shape()[axis] != embedded_control.shape()[axis] {
            return Err(ModelError::Dim {
                op: "concat_control",
                reason: format!(
                    "latent {:?} and control {:?} disagree outside the channel axis",
                    z.shape(),
                    embedded_control.shape()
                ),
            });
        }
    }
    Ok(Tensor::concat(&[z, embedded_control], 2)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embed_produces_one_token_per_axis() {
        let mut rng = DetRng::new(9);
        let vocab = AttributeVocab::<f64>::init(8, &mut rng).unwrap();
        let ctx = vocab.embed("sunny", "night", "urban").unwrap();
        assert_eq!(ctx.shape(), &[3, 8]);

        let again = vocab.embed("sunny", "day", "urban").unwrap();
        let diff_rows: Vec<bool> = (0..3)
            .map(|r| {
                let a = ctx.narrow(0, r, 1).unwrap();
                let b = again.narrow(0, r, 1).unwrap();
                a.max_abs_diff(&b).unwrap() > 0.0
            })
            .collect();
        assert_eq!(diff_rows, vec![false, true, false]);
    }

    #[test]
    fn unknown_attribute_lists_accepted_values() {
        let mut rng = DetRng::new(10);
        let vocab = AttributeVocab::<f64>::init(4, &mut rng).unwrap();
        let err = vocab.embed("sunny", "dusk", "urban").unwrap_err();
        match err {
            ModelError::Vocab { axis, value, valid } => {
                assert_eq!(axis, "time_of_day");
                assert_eq!(value, "dusk");
                assert!(valid.contains(&"night"));
            }
            other => panic!("expected vocab error, got {other}"),
        }
    }

    #[test]
    fn fused_condition_sits_on_frame_zero_only() {
        let mut rng = DetRng::new(11);
        let z = rng.normal_tensor::<f64>(&[3, 2, 4, 2, 2]).unwrap();
        let cond = rng.normal_tensor::<f64>(&[2, 4, 2, 2]).unwrap();
        let fused = fuse_image_condition(&z, &cond).unwrap();
        assert_eq!(fused.shape(), &[3, 2, 8, 2, 2]);

        let original = fused.narrow(2, 0, 4).unwrap();
        assert_eq!(original.data(), z.data());

        let frame0_extra = fused.narrow(0, 0, 1).unwrap().narrow(2, 4, 4).unwrap();
        assert_eq!(
            frame0_extra.data(),
            cond.reshape(&[1, 2, 4, 2, 2]).unwrap().data()
        );

        let rest_extra = fused.narrow(0, 1, 2).unwrap().narrow(2, 4, 4).unwrap();
        assert!(rest_extra.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn multi_frame_conditions_fill_leading_frames() {
        let z = Tensor::<f64>::zeros(&[4, 1, 2, 2, 2]);
        let c0 = Tensor::<f64>::full(&[1, 2, 2, 2], 1.0);
        let c1 = Tensor::<f64>::full(&[1, 2, 2, 2], 2.0);
        let fused = fuse_image_conditions(&z, &[c0, c1]).unwrap();
        let extra = fused.narrow(2, 2, 2).unwrap();
        let f0 = extra.narrow(0, 0, 1).unwrap();
        let f1 = extra.narrow(0, 1, 1).unwrap();
        let f2 = extra.narrow(0, 2, 2).unwrap();
        assert!(f0.data().iter().all(|v| *v == 1.0));
        assert!(f1.data().iter().all(|v| *v == 2.0));
        assert!(f2.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn condition_shape_mismatch_is_rejected() {
        let z = Tensor::<f64>::zeros(&[2, 2, 4, 2, 2]);
        let cond = Tensor::<f64>::zeros(&[2, 3, 2, 2]);
        assert!(matches!(
            fuse_image_condition(&z, &cond),
            Err(ModelError::Dim { .. })
        ));
        let too_many: Vec<Tensor<f64>> =
            (0..3).map(|_| Tensor::zeros(&[2, 4, 2, 2])).collect();
        assert!(matches!(
            fuse_image_conditions(&z, &too_many),
            Err(ModelError::Contract { .. })
        ));
    }

    #[test]
    fn control_embed_downsamples_to_latent_grid() {
        let mut rng = DetRng::new(12);
        let embed = ControlEmbed::<f32>::init(19, 4, 8, 6, &mut rng).unwrap();
        let x = rng.normal_tensor::<f32>(&[2, 19, 16, 32]).unwrap();
        let y = embed.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 8, 4, 8]);

        assert!(ControlEmbed::<f32>::init(19, 3, 8, 6, &mut rng).is_err());
    }

    #[test]
    fn concat_control_appends_channels() {
        let z = Tensor::<f64>::zeros(&[2, 3, 4, 2, 2]);
        let ctrl = Tensor::<f64>::full(&[2, 3, 5, 2, 2], 1.5);
        let merged = concat_control(&z, &ctrl).unwrap();
        assert_eq!(merged.shape(), &[2, 3, 9, 2, 2]);

        let bad = Tensor::<f64>::zeros(&[2, 2, 5, 2, 2]);
        assert!(concat_control(&z, &bad).is_err());
    }
}
