//! Reverse-process samplers: stochastic ancestral steps and the
//! deterministic DDIM trajectory used at inference.
//!
//! Both samplers share the noise-prediction parameterization: from a latent
//! `z_t` and a prediction `eps_hat`, the implied clean signal is
//! `pred_x0 = (z_t - sigma_t * eps_hat) / alpha_t`, and every update is a
//! remix of `pred_x0` with noise. Step `t = 1` is the terminal ancestral
//! step: it returns `pred_x0` directly, since the clean signal sits below
//! level 0 of the schedule and there is no lower noise level to sample.

use mvd_tensor::rng::DetRng;
use mvd_tensor::{no_grad, Elem, Tensor};

use crate::error::{DiffusionError, Result};
use crate::process::Denoiser;
use crate::schedule::NoiseSchedule;

/// Substream tag for the seeded Gaussian that initializes DDIM sampling.
const DDIM_INIT_STREAM: u64 = 0x4444_494D;

fn pred_x0<T: Elem>(
    z_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    alpha: f64,
    sigma: f64,
) -> Result<Tensor<T>> {
    Ok(z_t.sub(&eps_hat.scale(sigma))?.scale(1.0 / alpha))
}

/// One stochastic reverse step from level `t` toward the clean signal.
///
/// For `t >= 2` this samples the reverse posterior: mean per the noise-
/// prediction form of the posterior mean, variance `beta_tilde` scaled onto
/// the caller-supplied `noise`. At the terminal step `t == 1` the clean
/// estimate is returned directly and `noise` is ignored. `t == 0` is a
/// contract error: there is no level below 0 to step to.
pub fn ancestral_step<T: Elem>(
    z_t: &Tensor<T>,
    eps_hat: &Tensor<T>,
    t: usize,
    schedule: &NoiseSchedule,
    noise: &Tensor<T>,
) -> Result<Tensor<T>> {
    let _guard = no_grad();
    if t == 0 {
        return Err(DiffusionError::Contract {
            op: "ancestral_step",
            reason: "step 0 has no lower level to step to".into(),
        });
    }
    if t >= schedule.num_steps() {
        return Err(DiffusionError::Contract {
            op: "ancestral_step",
            reason: format!("step {t} out of range for {} steps", schedule.num_steps()),
        });
    }
    for (name, tensor) in [("eps_hat", eps_hat), ("noise", noise)] {
        if tensor.shape() != z_t.shape() {
            return Err(DiffusionError::Dim {
                op: "ancestral_step",
                reason: format!(
                    "{name} shape {:?} vs z_t shape {:?}",
                    tensor.shape(),
                    z_t.shape()
                ),
            });
        }
    }

    let x0 = pred_x0(z_t, eps_hat, schedule.alpha(t), schedule.sigma(t))?;
    if t == 1 {
        return Ok(x0);
    }

    let abar_t = schedule.alpha(t) * schedule.alpha(t);
    let abar_prev = schedule.alpha(t - 1) * schedule.alpha(t - 1);
    if 1.0 - abar_t < 1e-12 {
        return Err(DiffusionError::Contract {
            op: "ancestral_step",
            reason: format!("schedule carries no noise at step {t}; posterior is undefined"),
        });
    }
    let step_alpha = abar_t / abar_prev;
    let step_beta = 1.0 - step_alpha;
    let mean = x0
        .scale(abar_prev.sqrt() * step_beta / (1.0 - abar_t))
        .add(&z_t.scale(step_alpha.sqrt() * (1.0 - abar_prev) / (1.0 - abar_t)))?;
    let beta_tilde = (1.0 - abar_prev) / (1.0 - abar_t) * step_beta;
    Ok(mean.add(&noise.scale(beta_tilde.sqrt()))?)
}

/// The ascending inference-step grid for DDIM: `num_inference_steps` levels
/// evenly spaced through the training discretization, always ending at the
/// top level `num_steps - 1`.
pub fn ddim_timesteps(num_steps: usize, num_inference_steps: usize) -> Result<Vec<usize>> {
    if num_inference_steps == 0 || num_inference_steps > num_steps {
        return Err(DiffusionError::Config(format!(
            "num_inference_steps must lie in [1, {num_steps}], got {num_inference_steps}"
        )));
    }
    Ok((0..num_inference_steps)
        .map(|i| (i + 1) * num_steps / num_inference_steps - 1)
        .collect())
}

/// Deterministic (eta = 0) DDIM trajectory from a caller-supplied initial
/// latent at the top noise level down to the clean estimate.
///
/// Each non-final update moves to the next-lower grid level via
/// `alpha_prev * pred_x0 + sigma_prev * eps_hat`; the final update returns
/// `pred_x0` itself. Runs without gradient tracking.
pub fn ddim_sample_from<T: Elem, D: Denoiser<T> + ?Sized>(
    model: &D,
    z_init: &Tensor<T>,
    schedule: &NoiseSchedule,
    num_inference_steps: usize,
) -> Result<Tensor<T>> {
    let _guard = no_grad();
    let taus = ddim_timesteps(schedule.num_steps(), num_inference_steps)?;
    let mut z = z_init.clone();
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let eps_hat = model.predict(&z, t)?;
        if eps_hat.shape() != z.shape() {
            return Err(DiffusionError::Contract {
                op: "ddim_sample",
                reason: format!(
                    "model produced shape {:?} for input shape {:?}",
                    eps_hat.shape(),
                    z.shape()
                ),
            });
        }
        let x0 = pred_x0(&z, &eps_hat, schedule.alpha(t), schedule.sigma(t))?;
        z = if i == 0 {
            x0
        } else {
            let t_prev = taus[i - 1];
            x0.scale(schedule.alpha(t_prev))
                .add(&eps_hat.scale(schedule.sigma(t_prev)))?
        };
    }
    z.check_finite("ddim_sample")?;
    Ok(z)
}

/// Draws the seeded top-level Gaussian latent that [`ddim_sample`] starts
/// from. Exposed so callers can reproduce the initial latent of a run.
pub fn ddim_init_latent<T: Elem>(seed: u64, shape: &[usize]) -> Result<Tensor<T>> {
    Ok(DetRng::new(seed)
        .derive(DDIM_INIT_STREAM)
        .normal_tensor(shape)?)
}

/// Seeded DDIM sampling: a pure function of (seed, model weights, shape),
/// bit-identical across runs.
pub fn ddim_sample<T: Elem, D: Denoiser<T> + ?Sized>(
    model: &D,
    shape: &[usize],
    schedule: &NoiseSchedule,
    num_inference_steps: usize,
    seed: u64,
) -> Result<Tensor<T>> {
    let z_init = ddim_init_latent(seed, shape)?;
    ddim_sample_from(model, &z_init, schedule, num_inference_steps)
}
