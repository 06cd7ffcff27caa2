//! Noise schedules for the forward and reverse diffusion processes.
//!
//! Arrays are indexed by timestep `t` in `1..=steps`; index 0 is a sentinel
//! so that formulas can refer to `alpha_bar[t-1]` without offset gymnastics.
//! `alpha_bar[0] = 1` by construction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the reverse-process noise scale `sigma[t]` is derived.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// `sigma[t] = sqrt(posterior_beta[t])`, the true posterior scale.
    PosteriorSqrt,
    /// `sigma[t] = sqrt(beta[t])`, the upper-bound variant.
    BetaSqrt,
}

/// Parameters sufficient to rebuild a schedule; what manifests persist.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_start, self.beta_end, self.sigma_mode)
    }
}

/// Precomputed schedule quantities.
#[derive(Clone, Debug)]
pub struct NoiseSchedule {
    steps: usize,
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    posterior_beta: Vec<f64>,
    sigma: Vec<f64>,
    sigma_mode: SigmaMode,
}

impl NoiseSchedule {
    /// Builds a schedule from an explicit beta sequence (`beta[t]` for
    /// `t = 1..=steps`). Every beta must lie in `(0, 1)`.
    pub fn from_betas(betas: Vec<f64>, sigma_mode: SigmaMode) -> Result<Self> {
        let steps = betas.len();
        if steps == 0 {
            return Err(Error::parameter("schedule needs at least one step"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) || !b.is_finite() {
                return Err(Error::parameter(format!(
                    "beta[{}] = {} outside (0, 1)",
                    i + 1,
                    b
                )));
            }
        }

        let mut beta = vec![0.0; steps + 1];
        let mut alpha = vec![0.0; steps + 1];
        let mut alpha_bar = vec![0.0; steps + 1];
        alpha_bar[0] = 1.0;
        for t in 1..=steps {
            beta[t] = betas[t - 1];
            alpha[t] = 1.0 - beta[t];
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }

        // posterior_beta[t] = (1 - alpha_bar[t-1]) / (1 - alpha_bar[t]) * beta[t];
        // zero at t = 1 because alpha_bar[0] = 1.
        let mut posterior_beta = vec![0.0; steps + 1];
        for t in 1..=steps {
            posterior_beta[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }

        let mut sigma = vec![0.0; steps + 1];
        for t in 1..=steps {
            sigma[t] = match sigma_mode {
                SigmaMode::PosteriorSqrt => posterior_beta[t].sqrt(),
                SigmaMode::BetaSqrt => beta[t].sqrt(),
            };
        }

        Ok(NoiseSchedule {
            steps,
            beta,
            alpha,
            alpha_bar,
            posterior_beta,
            sigma,
            sigma_mode,
        })
    }

    /// Builds the standard linear-beta schedule over `steps` timesteps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64, sigma_mode: SigmaMode) -> Result<Self> {
        if steps == 0 {
            return Err(Error::parameter("schedule needs at least one step"));
        }
        if !(beta_start > 0.0) || !(beta_end < 1.0) || beta_start > beta_end {
            return Err(Error::parameter(format!(
                "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, sigma_mode)
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sigma_mode(&self) -> SigmaMode {
        self.sigma_mode
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps {
            return Err(Error::parameter(format!(
                "timestep {} outside 1..={}",
                t, self.steps
            )));
        }
        Ok(())
    }

    /// `beta[t]` for `t` in `1..=steps`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.beta[t])
    }

    /// `alpha[t] = 1 - beta[t]` for `t` in `1..=steps`.
    pub fn alpha(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.alpha[t])
    }

    /// Cumulative product `alpha_bar[t]` for `t` in `0..=steps`; `alpha_bar[0] = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        if t > self.steps {
            return Err(Error::parameter(format!(
                "timestep {} outside 0..={}",
                t, self.steps
            )));
        }
        Ok(self.alpha_bar[t])
    }

    /// Reverse-posterior variance `posterior_beta[t]`; zero at `t = 1`.
    pub fn posterior_beta(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.posterior_beta[t])
    }

    /// Reverse-step noise scale under the configured mode.
    pub fn sigma(&self, t: usize) -> Result<f64> {
        self.check_step(t)?;
        Ok(self.sigma[t])
    }

    /// `sqrt(1 - alpha_bar[steps])`: the marginal noise scale at the deepest step.
    pub fn terminal_sigma(&self) -> f64 {
        (1.0 - self.alpha_bar[self.steps]).sqrt()
    }
}
