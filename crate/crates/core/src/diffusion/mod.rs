//! Conditional denoising diffusion in latent space.
//!
//! The standard latent `z_B` is noised with the closed-form forward process
//! `z_t = sqrt(alpha_bar_t) z_B + sqrt(1 - alpha_bar_t) eta`, and a network
//! conditioned on the paired non-standard latent `z_A` learns to predict
//! `eta`. The loss adds an L1 term to the usual squared error. Sampling runs
//! the ancestral reverse chain from pure noise with `sigma_t^2 = beta_t`.
//!
//! All functions here work in the denoiser's own latent coordinates. Raw
//! codec latents are mapped into them by the model's [`LatentScaler`];
//! [`standardize_latent`] wraps that round trip.

mod denoiser;
mod schedule;

use alloc::format;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use denoiser::{time_embedding, DenoiserConfig, DenoiserModel, LatentScaler, NoisePredictor};
pub use schedule::{build_schedule, NoiseSchedule};

use crate::codec::{CodecModel, LatentVector};
use crate::nn::{Adam, Grads};
use crate::phantom::PairedDataset;
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Training hyperparameters of the diffusion phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiffusionConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    /// Weight of the L1 term.
    pub lambda_l1: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Independent `(t, eta)` draws per training pair in each epoch.
    pub noise_draws: usize,
    /// Optional bound on the implied `x_0` during sampling. `None` runs the
    /// plain ancestral update.
    pub x0_clip: Option<f64>,
    pub seed: u64,
}

impl Default for DiffusionConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
            lambda_l1: 1.0,
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 16,
            noise_draws: 48,
            x0_clip: None,
            seed: 0,
        }
    }
}

impl DiffusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 2 {
            return Err(Error::validation("diffusion needs at least 2 steps"));
        }
        if !(self.beta_min > 0.0 && self.beta_min < self.beta_max && self.beta_max < 1.0) {
            return Err(Error::validation("need 0 < beta_min < beta_max < 1"));
        }
        if !(self.lambda_l1 >= 0.0) {
            return Err(Error::validation("lambda_l1 must be non-negative"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::validation("learning_rate must be positive"));
        }
        if self.epochs < 1 || self.batch_size < 1 || self.noise_draws < 1 {
            return Err(Error::validation(
                "epochs, batch_size and noise_draws must be at least 1",
            ));
        }
        if let Some(c) = self.x0_clip {
            if !(c > 0.0) {
                return Err(Error::validation("x0_clip must be positive"));
            }
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

fn check_len(what: &str, v: &[f64], expected: usize) -> Result<()> {
    if v.len() != expected {
        return Err(Error::shape(
            format!("{what} of length {expected}"),
            format!("{what} of length {}", v.len()),
        ));
    }
    Ok(())
}

/// Closed-form forward noising of `z0` to step `t`.
pub fn q_sample(
    z0: &LatentVector,
    t: usize,
    eta: &LatentVector,
    schedule: &NoiseSchedule,
) -> Result<LatentVector> {
    schedule.check_step(t)?;
    check_len("eta", &eta.0, z0.len())?;
    Ok(LatentVector(q_sample_raw(&z0.0, t, &eta.0, schedule)))
}

fn q_sample_raw(z0: &[f64], t: usize, eta: &[f64], schedule: &NoiseSchedule) -> Vec<f64> {
    let (a, b) = schedule.marginal_coefficients(t);
    z0.iter().zip(eta).map(|(z, e)| a * z + b * e).collect()
}

/// Noise predicted by `model` for `z_t` at step `t` conditioned on `cond`.
pub fn predict_noise<M: NoisePredictor + ?Sized>(
    model: &M,
    z_t: &LatentVector,
    t: usize,
    cond: &LatentVector,
) -> Result<LatentVector> {
    let d = model.latent_dim();
    check_len("z_t", &z_t.0, d)?;
    check_len("cond", &cond.0, d)?;
    model.predict(&z_t.0, t, &cond.0).map(LatentVector)
}

/// `mean((eta - pred)^2) + lambda_l1 * mean(|eta - pred|)`.
pub fn combined_loss(eta: &[f64], pred: &[f64], lambda_l1: f64) -> f64 {
    let n = eta.len() as f64;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (e, p) in eta.iter().zip(pred) {
        let d = e - p;
        sq += d * d;
        abs += d.abs();
    }
    sq / n + lambda_l1 * abs / n
}

fn combined_loss_grad(eta: &[f64], pred: &[f64], lambda_l1: f64) -> Vec<f64> {
    let n = eta.len() as f64;
    eta.iter()
        .zip(pred)
        .map(|(e, p)| {
            let d = p - e;
            let sign = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            (2.0 * d + lambda_l1 * sign) / n
        })
        .collect()
}

/// Diffusion training loss for one `(z_A, z_B, t, eta)` draw.
pub fn diffusion_loss<M: NoisePredictor + ?Sized>(
    model: &M,
    z_a: &LatentVector,
    z_b: &LatentVector,
    t: usize,
    eta: &LatentVector,
    schedule: &NoiseSchedule,
    lambda_l1: f64,
) -> Result<f64> {
    let z_t = q_sample(z_b, t, eta, schedule)?;
    let pred = predict_noise(model, &z_t, t, z_a)?;
    let loss = combined_loss(&eta.0, &pred.0, lambda_l1);
    if !loss.is_finite() {
        return Err(Error::Numeric {
            step: t,
            what: "non-finite diffusion loss".into(),
        });
    }
    Ok(loss)
}

/// [`diffusion_loss`] together with its parameter gradient.
pub fn diffusion_loss_grad(
    model: &DenoiserModel,
    z_a: &LatentVector,
    z_b: &LatentVector,
    t: usize,
    eta: &LatentVector,
    schedule: &NoiseSchedule,
    lambda_l1: f64,
) -> Result<(f64, Grads)> {
    let mut grads = model.params().zeros_like();
    let loss = accumulate_loss_grad(model, &z_a.0, &z_b.0, t, &eta.0, schedule, lambda_l1, &mut grads)?;
    Ok((loss, grads))
}

#[allow(clippy::too_many_arguments)]
fn accumulate_loss_grad(
    model: &DenoiserModel,
    z_a: &[f64],
    z_b: &[f64],
    t: usize,
    eta: &[f64],
    schedule: &NoiseSchedule,
    lambda_l1: f64,
    grads: &mut Grads,
) -> Result<f64> {
    schedule.check_step(t)?;
    let d = model.config.latent_dim;
    check_len("z_a", z_a, d)?;
    check_len("z_b", z_b, d)?;
    check_len("eta", eta, d)?;
    if t > model.config.steps {
        return Err(Error::StepIndex {
            t,
            max: model.config.steps,
        });
    }
    let z_t = q_sample_raw(z_b, t, eta, schedule);
    let mut loss = 0.0;
    model.predict_with_backward(
        &z_t,
        t,
        z_a,
        |pred| {
            loss = combined_loss(eta, pred, lambda_l1);
            combined_loss_grad(eta, pred, lambda_l1)
        },
        grads,
    );
    if !loss.is_finite() {
        return Err(Error::Numeric {
            step: t,
            what: "non-finite diffusion loss".into(),
        });
    }
    Ok(loss)
}

/// Progress of one diffusion training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Trains `model` on the latents of `dataset` under the frozen `codec`.
pub fn train_diffusion(
    model: DenoiserModel,
    codec: &CodecModel,
    dataset: &PairedDataset,
    config: &DiffusionConfig,
) -> Result<DenoiserModel> {
    train_diffusion_observed(model, codec, dataset, config, |_| {})
}

/// [`train_diffusion`] with a callback after every epoch.
pub fn train_diffusion_observed(
    mut model: DenoiserModel,
    codec: &CodecModel,
    dataset: &PairedDataset,
    config: &DiffusionConfig,
    mut on_epoch: impl FnMut(EpochReport),
) -> Result<DenoiserModel> {
    config.validate()?;
    if codec.latent_dim() != model.config.latent_dim {
        return Err(Error::Config(format!(
            "codec latent_dim {} differs from denoiser latent_dim {}",
            codec.latent_dim(),
            model.config.latent_dim
        )));
    }
    if config.steps != model.config.steps {
        return Err(Error::Config(format!(
            "diffusion config has {} steps but the denoiser was built for {}",
            config.steps, model.config.steps
        )));
    }
    if dataset.is_empty() {
        return Err(Error::validation("cannot train diffusion on an empty dataset"));
    }
    let codec_before = codec.checksum();
    let schedule = config.schedule()?;

    let raw: Vec<(LatentVector, LatentVector)> = dataset
        .pairs
        .iter()
        .map(|p| Ok((codec.encode(&p.image_a)?, codec.encode(&p.image_b)?)))
        .collect::<Result<_>>()?;
    let pooled: Vec<&[f64]> = raw.iter().flat_map(|(a, b)| [a.as_slice(), b.as_slice()]).collect();
    model.scaler = LatentScaler::fit(&pooled)?;
    let latents: Vec<(Vec<f64>, Vec<f64>)> = raw
        .iter()
        .map(|(a, b)| (model.scaler.forward(&a.0), model.scaler.forward(&b.0)))
        .collect();

    let d = model.config.latent_dim;
    let mut rng = rng::stream(config.seed, tags::DIFFUSION_TRAIN);
    let mut opt = Adam::new(model.params(), config.learning_rate);
    let mut grads = model.params().zeros_like();
    let mut draws: Vec<usize> = (0..latents.len() * config.noise_draws)
        .map(|i| i % latents.len())
        .collect();
    let mut eta = alloc::vec![0.0; d];
    for epoch in 0..config.epochs {
        draws.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in draws.chunks(config.batch_size).enumerate() {
            grads.zero();
            let mut batch_loss = 0.0;
            for &i in chunk {
                let t = rng.random_range(1..=config.steps);
                eta.iter_mut().for_each(|e| *e = rng::standard_normal(&mut rng));
                let (za, zb) = &latents[i];
                batch_loss += accumulate_loss_grad(&model, za, zb, t, &eta, &schedule, config.lambda_l1, &mut grads)
                    .map_err(|_| Error::Divergence {
                        epoch,
                        batch,
                        loss: f64::NAN,
                    })?;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: batch_loss / chunk.len() as f64,
                });
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(model.params_mut(), &grads);
            total += batch_loss;
        }
        let mean_loss = total / draws.len() as f64;
        model.loss_history.push(mean_loss);
        on_epoch(EpochReport { epoch, mean_loss });
    }
    if codec.checksum() != codec_before {
        return Err(Error::Integrity(
            "codec parameters changed during diffusion training".into(),
        ));
    }
    Ok(model)
}

/// Mean of one reverse step `x_t -> x_{t-1}`, before the noise is added.
///
/// With `x0_clip` the implied `x_0` estimate is clamped to `[-c, c]` first;
/// without it this is the usual `(x_t - beta/sqrt(1-abar) eps)/sqrt(alpha)`.
pub fn reverse_mean<M: NoisePredictor + ?Sized>(
    model: &M,
    x_t: &[f64],
    t: usize,
    cond: &LatentVector,
    schedule: &NoiseSchedule,
    x0_clip: Option<f64>,
) -> Result<Vec<f64>> {
    let d = model.latent_dim();
    check_len("x_t", x_t, d)?;
    check_len("cond", &cond.0, d)?;
    schedule.check_step(t)?;
    let eps = model.predict(x_t, t, &cond.0)?;
    check_len("predicted noise", &eps, d)?;
    let beta = schedule.beta_at(t);
    let mut x = x_t.to_vec();
    match x0_clip {
        None => {
            let inv_sqrt_alpha = 1.0 / math::sqrt(schedule.alpha_at(t));
            let coef = beta / math::sqrt(1.0 - schedule.alpha_bar_at(t));
            for (xi, e) in x.iter_mut().zip(&eps) {
                *xi = inv_sqrt_alpha * (*xi - coef * e);
            }
        }
        Some(c) => {
            let (sa, s1) = schedule.marginal_coefficients(t);
            let ab = schedule.alpha_bar_at(t);
            let ab_prev = if t > 1 { schedule.alpha_bar_at(t - 1) } else { 1.0 };
            let c0 = math::sqrt(ab_prev) * beta / (1.0 - ab);
            let ct = math::sqrt(schedule.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab);
            for (xi, e) in x.iter_mut().zip(&eps) {
                let x0 = ((*xi - s1 * e) / sa).clamp(-c, c);
                *xi = c0 * x0 + ct * *xi;
            }
        }
    }
    Ok(x)
}

/// Full reverse chain `[x_T, x_{T-1}, ..., x_0]` conditioned on `cond`.
pub fn sample_trajectory<M: NoisePredictor + ?Sized>(
    model: &M,
    cond: &LatentVector,
    schedule: &NoiseSchedule,
    x0_clip: Option<f64>,
    seed: u64,
) -> Result<Vec<LatentVector>> {
    let d = model.latent_dim();
    check_len("cond", &cond.0, d)?;
    let mut rng = rng::stream(seed, tags::SAMPLER);
    let mut x: Vec<f64> = (0..d).map(|_| rng::standard_normal(&mut rng)).collect();
    let mut out = Vec::with_capacity(schedule.steps() + 1);
    out.push(LatentVector(x.clone()));
    for t in (1..=schedule.steps()).rev() {
        x = reverse_mean(model, &x, t, cond, schedule, x0_clip)?;
        let sigma = math::sqrt(schedule.beta_at(t));
        if t > 1 {
            for xi in x.iter_mut() {
                let z: f64 = rng::standard_normal(&mut rng);
                *xi += sigma * z;
            }
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: t,
                what: format!("non-finite latent entry {i} during reverse sampling"),
            });
        }
        out.push(LatentVector(x.clone()));
    }
    Ok(out)
}

/// Ancestral sample `x_0` of the standard-domain latent given `cond`.
pub fn sample_standardized<M: NoisePredictor + ?Sized>(
    model: &M,
    cond: &LatentVector,
    schedule: &NoiseSchedule,
    x0_clip: Option<f64>,
    seed: u64,
) -> Result<LatentVector> {
    let mut traj = sample_trajectory(model, cond, schedule, x0_clip, seed)?;
    Ok(traj.pop().unwrap())
}

/// Maps a raw codec latent `z_A` to a standardized raw latent `z_A'`.
pub fn standardize_latent(
    model: &DenoiserModel,
    z_a: &LatentVector,
    schedule: &NoiseSchedule,
    x0_clip: Option<f64>,
    seed: u64,
) -> Result<LatentVector> {
    check_len("z_a", &z_a.0, model.config.latent_dim)?;
    if schedule.steps() != model.config.steps {
        return Err(Error::Config(format!(
            "schedule has {} steps but the denoiser was trained for {}",
            schedule.steps(),
            model.config.steps
        )));
    }
    let cond = LatentVector(model.scaler.forward(&z_a.0));
    let u = sample_standardized(model, &cond, schedule, x0_clip, seed)?;
    Ok(LatentVector(model.scaler.inverse(&u.0)))
}
