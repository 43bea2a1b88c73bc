//! Top-level denoising model: the UNet plus attribute vocabulary and the
//! selected layout-control path, assembled from one config.

use mvd_tensor::rng::DetRng;
use mvd_tensor::{Elem, Tensor};
use serde::{Deserialize, Serialize};

use crate::conditioning::{
    concat_control, fuse_image_conditions, AttributeVocab, ConditionBundle, ControlBranch,
    ControlEmbed,
};
use crate::error::{ModelError, Result};
use crate::unet::{Mode, UNet, UNetConfig};

/// How projected-layout frames reach the denoiser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlMode {
    /// Trainable encoder copy with zero-initialized fusion projections.
    ControlNet,
    /// Embedded control features concatenated onto the latent channels.
    Concat,
    /// Layout conditioning disabled.
    None,
}

/// Full model shape. `unet.in_channels` must account for the latent
/// channels plus whatever conditioning is concatenated onto them, which
/// `validate` checks explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub latent_channels: usize,
    /// Second-stage models take the clean first frame as extra channels.
    pub image_conditioned: bool,
    pub control_mode: ControlMode,
    pub control_channels: usize,
    /// Pixels per latent cell; the control embedding strides this away.
    pub control_downsample: usize,
    pub control_embed_channels: usize,
    pub unet: UNetConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            latent_channels: 48,
            image_conditioned: false,
            control_mode: ControlMode::ControlNet,
            control_channels: 19,
            control_downsample: 4,
            control_embed_channels: 24,
            unet: UNetConfig::default(),
        }
    }
}

impl ModelConfig {
    /// Channels the denoiser must accept given the conditioning choices.
    pub fn expected_in_channels(&self) -> usize {
        let mut c = self.latent_channels;
        if self.image_conditioned {
            c += self.latent_channels;
        }
        if self.control_mode == ControlMode::Concat {
            c += self.control_embed_channels;
        }
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.unet.validate()?;
        if self.latent_channels == 0 {
            return Err(ModelError::Config("latent_channels must be positive".into()));
        }
        let expected = self.expected_in_channels();
        if self.unet.in_channels != expected {
            return Err(ModelError::Config(format!(
                "unet.in_channels is {} but the conditioning layout needs {expected}",
                self.unet.in_channels
            )));
        }
        if self.unet.out_channels != self.latent_channels {
            return Err(ModelError::Config(format!(
                "unet.out_channels is {} but noise prediction needs {}",
                self.unet.out_channels, self.latent_channels
            )));
        }
        if self.control_mode != ControlMode::None {
            if self.control_channels == 0 {
                return Err(ModelError::Config(
                    "control_channels must be positive when control is active".into(),
                ));
            }
            if self.control_embed_channels == 0 {
                return Err(ModelError::Config(
                    "control_embed_channels must be positive when control is active".into(),
                ));
            }
        }
        Ok(())
    }
}

/// The assembled denoiser with every conditioning path it owns.
pub struct MultiViewModel<T: Elem> {
    cfg: ModelConfig,
    pub unet: UNet<T>,
    pub vocab: AttributeVocab<T>,
    control: Option<ControlBranch<T>>,
    concat_embed: Option<ControlEmbed<T>>,
}

impl<T: Elem> MultiViewModel<T> {
    pub fn init(cfg: ModelConfig, rng: &mut DetRng) -> Result<Self> {
        cfg.validate()?;
        let unet = UNet::init(cfg.unet.clone(), rng)?;
        let vocab = AttributeVocab::init(cfg.unet.context_dim, rng)?;
        let control = if cfg.control_mode == ControlMode::ControlNet {
            Some(ControlBranch::from_unet(
                &unet,
                cfg.control_channels,
                cfg.control_downsample,
                cfg.control_embed_channels,
                rng,
            )?)
        } else {
            None
        };
        let concat_embed = if cfg.control_mode == ControlMode::Concat {
            Some(ControlEmbed::init(
                cfg.control_channels,
                cfg.control_downsample,
                cfg.control_embed_channels,
                cfg.control_embed_channels,
                rng,
            )?)
        } else {
            None
        };
        Ok(MultiViewModel {
            cfg,
            unet,
            vocab,
            control,
            concat_embed,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn mode(&self) -> Mode {
        if self.cfg.unet.temporal {
            Mode::Video
        } else {
            Mode::Image
        }
    }

    /// Builds the denoiser input from the latent and the bundle's
    /// concatenated conditioning, in the fixed order latent, image
    /// condition, embedded control.
    fn augment_input(&self, z_t: &Tensor<T>, bundle: &ConditionBundle<T>) -> Result<Tensor<T>> {
        let mut x = z_t.clone();
        if self.cfg.image_conditioned {
            let cond = bundle.image_condition.as_ref().ok_or(ModelError::Contract {
                op: "model_predict",
                reason: "model is image-conditioned but the bundle has no image condition".into(),
            })?;
            let conds = split_condition_frames(cond)?;
            x = fuse_image_conditions(&x, &conds)?;
        } else if bundle.image_condition.is_some() {
            return Err(ModelError::Contract {
                op: "model_predict",
                reason: "bundle carries an image condition but the model ignores it".into(),
            });
        }
        if self.cfg.control_mode == ControlMode::Concat {
            let control = bundle.control_images.as_ref().ok_or(ModelError::Contract {
                op: "model_predict",
                reason: "concat control mode needs control images in the bundle".into(),
            })?;
            let (t, v, c, h, w) = (
                control.shape()[0],
                control.shape()[1],
                control.shape()[2],
                control.shape()[3],
                control.shape()[4],
            );
            let embed = self.concat_embed.as_ref().expect("concat mode owns an embed");
            let flat = embed.forward(&control.reshape(&[t * v, c, h, w])?)?;
            let (ec, eh, ew) = (flat.shape()[1], flat.shape()[2], flat.shape()[3]);
            x = concat_control(&x, &flat.reshape(&[t, v, ec, eh, ew])?)?;
        }
        Ok(x)
    }

    /// Noise prediction for `z_t` at step `t` under the bundle's
    /// conditioning. `z_t` is (T, V, latent_channels, h, w).
    pub fn predict(
        &self,
        z_t: &Tensor<T>,
        t: usize,
        bundle: &ConditionBundle<T>,
    ) -> Result<Tensor<T>> {
        if z_t.shape().len() != 5 || z_t.shape()[2] != self.cfg.latent_channels {
            return Err(ModelError::Dim {
                op: "model_predict",
                reason: format!(
                    "latent must be (T, V, {}, h, w), got {:?}",
                    self.cfg.latent_channels,
                    z_t.shape()
                ),
            });
        }
        let x = self.augment_input(z_t, bundle)?;
        let frames = x.shape()[0];
        let views = x.shape()[1];
        let (c, h, w) = (x.shape()[2], x.shape()[3], x.shape()[4]);

        let control_features = match (&self.control, &bundle.control_images) {
            (Some(branch), Some(control)) => {
                let flat = x.reshape(&[frames * views, c, h, w])?;
                Some(branch.forward(&flat, control, frames, t, &bundle.context_tokens)?)
            }
            (Some(_), None) => {
                return Err(ModelError::Contract {
                    op: "model_predict",
                    reason: "control branch is active but the bundle has no control images".into(),
                })
            }
            (None, Some(_)) if self.cfg.control_mode == ControlMode::None => {
                return Err(ModelError::Contract {
                    op: "model_predict",
                    reason: "bundle carries control images but control is disabled".into(),
                })
            }
            _ => None,
        };

        self.unet.forward(
            &x,
            t,
            &bundle.context_tokens,
            control_features.as_ref(),
            self.mode(),
        )
    }

    pub fn visit_params(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>)) {
        self.unet.visit_params(&format!("{prefix}.unet"), f);
        self.vocab.visit_params(&format!("{prefix}.vocab"), f);
        if let Some(control) = &mut self.control {
            control.visit_params(&format!("{prefix}.control"), f);
        }
        if let Some(embed) = &mut self.concat_embed {
            embed.visit_params(&format!("{prefix}.concat_embed"), f);
        }
    }

    pub fn param_count(&mut self) -> usize {
        let mut count = 0;
        self.visit_params("model", &mut |_, t| count += t.numel());
        count
    }
}

/// Splits a (V, C, h, w) or (k, V, C, h, w) condition into per-frame
/// tensors for fusion.
fn split_condition_frames<T: Elem>(cond: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    match cond.shape().len() {
        4 => Ok(vec![cond.clone()]),
        5 => {
            let k = cond.shape()[0];
            let rest = &cond.shape()[1..];
            (0..k)
                .map(|i| Ok(cond.narrow(0, i, 1)?.reshape(rest)?))
                .collect()
        }
        _ => Err(ModelError::Dim {
            op: "model_predict",
            reason: format!(
                "image condition must be (V, C, h, w) or (k, V, C, h, w), got {:?}",
                cond.shape()
            ),
        }),
    }
}
