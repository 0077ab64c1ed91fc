//! Noise schedule and DDIM timestep selection.
//!
//! Timesteps are indexed `t in 1..=T`, with `alpha_bar(0) = 1` reserved for
//! the clean image so that noising to `t = 0` is the identity.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable schedule parameters, as they appear in experiment configs
/// and checkpoint manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams { timesteps: 1000, beta_start: 0.00085, beta_end: 0.012 }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }
}

/// The beta/alpha/alpha-bar sequences defining a length-`T` forward
/// diffusion process.
///
/// Schedules are immutable after construction and safe to share across
/// threads. All values are kept at `f64`; samplers convert to their working
/// precision at the point of use.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    /// Indexed by `t` directly: `alpha_bars[0] = 1`, length `T + 1`.
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule with `beta_t` linearly interpolated from
    /// `beta_start` to `beta_end` inclusive over `timesteps` steps.
    ///
    /// Rejects `timesteps = 0` and betas outside `(0, 1)` or out of order.
    pub fn linear(timesteps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if timesteps == 0 {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::invalid(format!(
                "betas must satisfy 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
            )));
        }
        let betas: Vec<f64> = if timesteps == 1 {
            vec![beta_start]
        } else {
            let step = (beta_end - beta_start) / (timesteps - 1) as f64;
            (0..timesteps).map(|i| beta_start + step * i as f64).collect()
        };
        Self::from_betas(betas)
    }

    /// Builds a schedule from an explicit beta sequence.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("schedule needs at least one timestep"));
        }
        if let Some(b) = betas.iter().find(|b| !(0.0 < **b && **b < 1.0)) {
            return Err(Error::invalid(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for a in &alphas {
            prod *= a;
            alpha_bars.push(prod);
        }
        if prod <= 0.0 {
            return Err(Error::invalid(
                "alpha_bar underflowed to zero; schedule too long or betas too large",
            ));
        }
        Ok(NoiseSchedule { betas, alphas, alpha_bars })
    }

    /// Number of diffusion timesteps `T`.
    pub fn num_timesteps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t in 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1, "beta is defined for t >= 1");
        self.betas[t - 1]
    }

    /// `alpha_t = 1 - beta_t` for `t in 1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1, "alpha is defined for t >= 1");
        self.alphas[t - 1]
    }

    /// Cumulative product `alpha_bar_t` for `t in 0..=T`; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    /// Alpha-bar sequence indexed by `t`, including the `t = 0` entry.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

/// Returns the descending timestep subsequence visited by a DDIM sampler
/// taking `num_steps` steps over a length-`t_max` schedule.
///
/// The stride is `floor(t_max / num_steps)`, anchored at `t_max`, so the
/// first denoising step always starts from pure noise. Consecutive pairs
/// `(ts[i], ts[i + 1])` (with a final implicit 0) drive `ddim_step`.
pub fn ddim_timesteps(t_max: usize, num_steps: usize) -> Result<Vec<usize>> {
    if num_steps == 0 {
        return Err(Error::invalid("num_steps must be at least 1"));
    }
    if num_steps > t_max {
        return Err(Error::invalid(format!(
            "num_steps {num_steps} exceeds schedule length {t_max}"
        )));
    }
    let stride = t_max / num_steps;
    Ok((0..num_steps).map(|i| t_max - i * stride).collect())
}
