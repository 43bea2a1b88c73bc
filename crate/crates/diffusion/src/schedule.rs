//! Variance-preserving noise schedule built from a linear beta ramp.
//!
//! Step indices are zero-based: `t` in `0..num_steps`, with `t = 0` the least
//! noised level and `t = num_steps - 1` the most. The clean signal itself sits
//! conceptually below level 0 and is what the reverse process ultimately
//! targets.

use serde::{Deserialize, Serialize};

use crate::error::{DiffusionError, Result};

/// Serializable schedule parameters, stored inside checkpoints so a schedule
/// can be rebuilt exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub num_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            num_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.num_steps, self.beta_start, self.beta_end)
    }
}

/// Per-step signal and noise coefficients of a variance-preserving process.
///
/// Invariants established at construction and never mutated:
/// `alpha[t]^2 + sigma[t]^2 = 1` within 1e-6 for every `t`, and `alpha` is
/// monotonically non-increasing.
#[derive(Debug, Clone)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    alpha: Vec<f64>,
    sigma: Vec<f64>,
}

/// Builds a schedule from a linear interpolation of per-step beta values.
///
/// `beta_start = beta_end = 0` is allowed and yields the noiseless schedule
/// (`alpha = 1`, `sigma = 0` everywhere); betas must stay below 1 so that
/// every `alpha[t]` is strictly positive.
pub fn make_schedule(num_steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if num_steps == 0 {
        return Err(DiffusionError::Config(
            "num_steps must be at least 1".into(),
        ));
    }
    if !(0.0..1.0).contains(&beta_start) || !(0.0..1.0).contains(&beta_end) {
        return Err(DiffusionError::Config(format!(
            "betas must lie in [0, 1), got beta_start={beta_start}, beta_end={beta_end}"
        )));
    }
    if beta_start > beta_end {
        return Err(DiffusionError::Config(format!(
            "beta_start={beta_start} exceeds beta_end={beta_end}"
        )));
    }

    let mut alpha = Vec::with_capacity(num_steps);
    let mut sigma = Vec::with_capacity(num_steps);
    let mut alpha_bar = 1.0f64;
    for t in 0..num_steps {
        let frac = if num_steps == 1 {
            0.0
        } else {
            t as f64 / (num_steps - 1) as f64
        };
        let beta = beta_start + (beta_end - beta_start) * frac;
        alpha_bar *= 1.0 - beta;
        alpha.push(alpha_bar.sqrt());
        sigma.push((1.0 - alpha_bar).sqrt());
    }

    Ok(NoiseSchedule {
        config: ScheduleConfig {
            num_steps,
            beta_start,
            beta_end,
        },
        alpha,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn num_steps(&self) -> usize {
        self.config.num_steps
    }

    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    /// Signal coefficient at step `t`. Panics if `t` is out of range; step
    /// validity is part of every caller's precondition.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t < self.alpha.len(), "step {t} out of range");
        self.alpha[t]
    }

    /// Noise coefficient at step `t`. Panics if `t` is out of range.
    pub fn sigma(&self, t: usize) -> f64 {
        assert!(t < self.sigma.len(), "step {t} out of range");
        self.sigma[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }
}
