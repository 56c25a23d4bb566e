use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-step variances `beta_t` and the derived `alpha_t = 1 - beta_t` and
/// `alpha_bar_t = prod_{s <= t} alpha_s`. Index `t - 1` holds step `t`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Builds a schedule from explicit betas, which must be strictly
    /// increasing inside `(0, 1)`. A single step is allowed.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::validation("schedule needs at least one step"));
        }
        if beta.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(Error::validation("every beta must lie in (0, 1)"));
        }
        if beta.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("betas must be strictly increasing"));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t < 1 || t > self.steps() {
            return Err(Error::StepIndex {
                t,
                max: self.steps(),
            });
        }
        Ok(())
    }

    pub fn beta_at(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha_at(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar_at(&self, t: usize) -> f64 {
        self.alpha_bar[t - 1]
    }

    /// `sqrt(alpha_bar_t)` and `sqrt(1 - alpha_bar_t)`.
    pub fn marginal_coefficients(&self, t: usize) -> (f64, f64) {
        let ab = self.alpha_bar_at(t);
        (math::sqrt(ab), math::sqrt(1.0 - ab))
    }
}

/// Linear schedule from `beta_min` to `beta_max` over `steps >= 2` steps.
pub fn build_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::validation(alloc::format!(
            "a linear schedule needs at least 2 steps, got {steps}"
        )));
    }
    if !(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0) {
        return Err(Error::validation(alloc::format!(
            "need 0 < beta_min < beta_max < 1, got {beta_min}, {beta_max}"
        )));
    }
    let beta = (0..steps)
        .map(|i| beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64)
        .collect();
    NoiseSchedule::from_betas(beta)
}
