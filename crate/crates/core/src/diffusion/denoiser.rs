use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use serde::{Deserialize, Serialize};

use crate::nn::{self, Dense, Grads, Init, ParamSet};
use crate::rng::{self, tags};
use crate::{Error, Result};

/// Architecture of the noise-prediction network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    /// Widths of the hidden layers. Layers of equal width mirrored around
    /// the middle are joined by skip connections, and consecutive layers of
    /// equal width by residual connections.
    pub hidden_widths: Vec<usize>,
    /// Length of the sinusoidal step embedding (even).
    pub time_embedding_dim: usize,
    /// Number of diffusion steps the model is trained for.
    pub steps: usize,
    pub seed: u64,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            hidden_widths: vec![256, 512, 256],
            time_embedding_dim: 32,
            steps: 1000,
            seed: 0,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim < 1 {
            return Err(Error::validation("latent_dim must be at least 1"));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::validation("hidden widths must be non-empty and positive"));
        }
        if self.time_embedding_dim % 2 != 0 {
            return Err(Error::validation("time_embedding_dim must be even"));
        }
        if self.steps < 1 {
            return Err(Error::validation("steps must be at least 1"));
        }
        Ok(())
    }

    fn input_len(&self) -> usize {
        2 * self.latent_dim + self.time_embedding_dim
    }

    /// For hidden layer `i`, the earlier layers whose activations are added
    /// to its output.
    fn skip_sources(&self, i: usize) -> Vec<usize> {
        let w = &self.hidden_widths;
        let mut out = Vec::new();
        if i > 0 && w[i - 1] == w[i] {
            out.push(i - 1);
        }
        let n = w.len();
        let mirror = n - 1 - i;
        if mirror + 1 < i && w[mirror] == w[i] {
            out.push(mirror);
        }
        out
    }
}

/// Sinusoidal embedding of the step index.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for j in 0..half {
        let freq = math::exp(-math::ln(10_000.0) * j as f64 / half.max(1) as f64);
        let a = t as f64 * freq;
        out[j] = math::sin(a);
        out[half + j] = math::cos(a);
    }
    out
}

/// Per-dimension affine map between raw codec latents and the unit-scale
/// coordinates the diffusion model works in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl LatentScaler {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Fits mean and standard deviation per dimension. Standard deviations
    /// are floored at `1e-3` times their average so degenerate dimensions
    /// are not blown up.
    pub fn fit(samples: &[&[f64]]) -> Result<Self> {
        let Some(first) = samples.first() else {
            return Err(Error::validation("cannot fit a latent scaler on no samples"));
        };
        let dim = first.len();
        let n = samples.len() as f64;
        let mut mean = vec![0.0; dim];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s.iter()) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for s in samples {
            for ((acc, v), m) in var.iter_mut().zip(s.iter()).zip(&mean) {
                *acc += (v - m) * (v - m) / n;
            }
        }
        let mut std: Vec<f64> = var.iter().map(|v| math::sqrt(*v)).collect();
        let avg = std.iter().sum::<f64>() / dim as f64;
        let floor = (1e-3 * avg).max(1e-12);
        std.iter_mut().for_each(|s| *s = s.max(floor));
        Ok(Self { mean, std })
    }

    pub fn forward(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn inverse(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}

/// Anything that predicts the noise component of a diffused latent.
pub trait NoisePredictor {
    fn latent_dim(&self) -> usize;

    /// Predicted noise for `z_t` at step `t` given the condition `cond`.
    fn predict(&self, z_t: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>>;
}

/// Denoising network: an MLP over `[z_t, cond, embed(t)]` with SiLU
/// activations, skip connections and a zero-initialized output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    params: ParamSet,
    hidden: Vec<Dense>,
    output: Dense,
    /// Mapping from raw codec latents into model coordinates.
    pub scaler: LatentScaler,
    /// Mean loss of each training epoch.
    pub loss_history: Vec<f64>,
}

struct Trace {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
}

impl DenoiserModel {
    /// A fresh model with weights drawn from `config.seed` and a zero
    /// output layer, so it predicts zero noise until trained.
    pub fn new(config: &DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::default();
        let mut rng = rng::stream(config.seed, tags::DENOISER_INIT);
        let mut prev = config.input_len();
        let mut hidden = Vec::new();
        for (i, &w) in config.hidden_widths.iter().enumerate() {
            hidden.push(Dense::new(&mut params, &format!("hidden.{i}"), prev, w, Init::He, &mut rng));
            prev = w;
        }
        let output = Dense::new(&mut params, "out", prev, config.latent_dim, Init::Zero, &mut rng);
        Ok(Self {
            config: config.clone(),
            params,
            hidden,
            output,
            scaler: LatentScaler::identity(config.latent_dim),
            loss_history: Vec::new(),
        })
    }

    pub fn from_parts(config: &DenoiserConfig, params: ParamSet, scaler: LatentScaler) -> Result<Self> {
        let mut model = Self::new(config)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Config(
                "stored denoiser parameters do not match the configured architecture".into(),
            ));
        }
        if scaler.mean.len() != config.latent_dim || scaler.std.len() != config.latent_dim {
            return Err(Error::Config("latent scaler length differs from latent_dim".into()));
        }
        model.params = params;
        model.scaler = scaler;
        Ok(model)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn checksum(&self) -> [u8; 32] {
        self.params.checksum()
    }

    fn check_inputs(&self, z_t: &[f64], t: usize, cond: &[f64]) -> Result<()> {
        let d = self.config.latent_dim;
        if z_t.len() != d || cond.len() != d {
            return Err(Error::shape(
                format!("latents of length {d}"),
                format!("z_t of length {} and cond of length {}", z_t.len(), cond.len()),
            ));
        }
        if t < 1 || t > self.config.steps {
            return Err(Error::StepIndex {
                t,
                max: self.config.steps,
            });
        }
        Ok(())
    }

    fn forward(&self, z_t: &[f64], t: usize, cond: &[f64], trace: Option<&mut Trace>) -> Vec<f64> {
        let mut input = Vec::with_capacity(self.config.input_len());
        input.extend_from_slice(z_t);
        input.extend_from_slice(cond);
        input.extend(time_embedding(t, self.config.time_embedding_dim));
        let mut pre_all = Vec::with_capacity(self.hidden.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.hidden.len());
        for (i, layer) in self.hidden.iter().enumerate() {
            let x = if i == 0 { &input } else { &acts[i - 1] };
            let pre = layer.forward(&self.params, x);
            let mut a = nn::silu(&pre);
            for src in self.config.skip_sources(i) {
                for (v, s) in a.iter_mut().zip(&acts[src]) {
                    *v += s;
                }
            }
            pre_all.push(pre);
            acts.push(a);
        }
        let out = self.output.forward(&self.params, acts.last().unwrap());
        if let Some(tr) = trace {
            tr.input = input;
            tr.pre = pre_all;
            tr.act = acts;
        }
        out
    }

    /// Noise prediction plus the gradient of `sum(g_out * prediction)` with
    /// respect to every parameter, accumulated into `grads`.
    pub(crate) fn predict_with_backward(
        &self,
        z_t: &[f64],
        t: usize,
        cond: &[f64],
        grad_fn: impl FnOnce(&[f64]) -> Vec<f64>,
        grads: &mut Grads,
    ) -> Vec<f64> {
        let mut tr = Trace {
            input: Vec::new(),
            pre: Vec::new(),
            act: Vec::new(),
        };
        let out = self.forward(z_t, t, cond, Some(&mut tr));
        let g_out = grad_fn(&out);
        let n = self.hidden.len();
        let p = &self.params;
        let mut g_act: Vec<Vec<f64>> = tr.act.iter().map(|a| vec![0.0; a.len()]).collect();
        let g_last = self.output.backward(p, &tr.act[n - 1], &g_out, grads);
        g_act[n - 1] = g_last;
        for i in (0..n).rev() {
            let g = core::mem::take(&mut g_act[i]);
            for src in self.config.skip_sources(i) {
                for (acc, v) in g_act[src].iter_mut().zip(&g) {
                    *acc += v;
                }
            }
            let g_pre = nn::silu_backward(&tr.pre[i], &g);
            let x = if i == 0 { &tr.input } else { &tr.act[i - 1] };
            let g_in = self.hidden[i].backward(p, x, &g_pre, grads);
            if i > 0 {
                for (acc, v) in g_act[i - 1].iter_mut().zip(&g_in) {
                    *acc += v;
                }
            }
        }
        out
    }
}

impl NoisePredictor for DenoiserModel {
    fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn predict(&self, z_t: &[f64], t: usize, cond: &[f64]) -> Result<Vec<f64>> {
        self.check_inputs(z_t, t, cond)?;
        let out = self.forward(z_t, t, cond, None);
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: t,
                what: "non-finite noise prediction".into(),
            });
        }
        Ok(out)
    }
}
