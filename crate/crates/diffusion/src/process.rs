//! Forward diffusion and the noise-prediction training objective.

use mvd_tensor::{Elem, Tensor};

use crate::error::{DiffusionError, Result};
use crate::schedule::NoiseSchedule;

/// A noise predictor: given a noised latent and its step index, returns an
/// estimate of the unit-Gaussian noise that produced it.
///
/// Conditioning (text attributes, control images, first-frame latents) is
/// bound into the implementor before sampling, so samplers and the loss stay
/// agnostic of what a model is conditioned on.
pub trait Denoiser<T: Elem> {
    fn predict(&self, z_t: &Tensor<T>, t: usize) -> Result<Tensor<T>>;
}

impl<T: Elem, F> Denoiser<T> for F
where
    F: Fn(&Tensor<T>, usize) -> Result<Tensor<T>>,
{
    fn predict(&self, z_t: &Tensor<T>, t: usize) -> Result<Tensor<T>> {
        self(z_t, t)
    }
}

/// Applies the fixed forward process at step `t`: `alpha_t * z + sigma_t * eps`.
///
/// The coefficients are scalars, so the same mixing applies uniformly across
/// every frame, view, and channel regardless of the latent's layout.
pub fn forward_diffuse<T: Elem>(
    z: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<T>> {
    if t >= schedule.num_steps() {
        return Err(DiffusionError::Contract {
            op: "forward_diffuse",
            reason: format!("step {t} out of range for {} steps", schedule.num_steps()),
        });
    }
    if z.shape() != eps.shape() {
        return Err(DiffusionError::Dim {
            op: "forward_diffuse",
            reason: format!("z shape {:?} vs eps shape {:?}", z.shape(), eps.shape()),
        });
    }
    Ok(z.scale(schedule.alpha(t)).add(&eps.scale(schedule.sigma(t)))?)
}

/// Mean-squared error between the model's noise prediction at step `t` and
/// the noise actually injected. Differentiable with respect to everything the
/// model's prediction depends on.
pub fn denoise_loss<T: Elem, D: Denoiser<T> + ?Sized>(
    model: &D,
    z: &Tensor<T>,
    t: usize,
    eps: &Tensor<T>,
    schedule: &NoiseSchedule,
) -> Result<Tensor<T>> {
    let z_t = forward_diffuse(z, t, eps, schedule)?;
    let eps_hat = model.predict(&z_t, t)?;
    if eps_hat.shape() != z.shape() {
        return Err(DiffusionError::Contract {
            op: "denoise_loss",
            reason: format!(
                "model produced shape {:?} for input shape {:?}",
                eps_hat.shape(),
                z.shape()
            ),
        });
    }
    Ok(eps_hat.mse(eps)?)
}
