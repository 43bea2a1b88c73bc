//! Diffusion process machinery for the multi-view video model: variance-
//! preserving noise schedules, the forward process and its training loss,
//! ancestral and DDIM reverse samplers, and the space-to-depth latent codec.
//!
//! Everything here is deterministic given its inputs; the only randomness is
//! routed through explicit seeds or caller-supplied noise tensors, so
//! sampling runs are bit-reproducible.

mod error;
mod latent;
mod process;
mod sampler;
mod schedule;

pub use error::{DiffusionError, Result};
pub use latent::{CodecProjection, LatentCodec, PanoramicLatent};
pub use process::{denoise_loss, forward_diffuse, Denoiser};
pub use sampler::{ancestral_step, ddim_init_latent, ddim_sample, ddim_sample_from, ddim_timesteps};
pub use schedule::{make_schedule, NoiseSchedule, ScheduleConfig};
