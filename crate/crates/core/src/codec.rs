//! Convolutional encoder-decoder between image slices and flat latents.
//!
//! The encoder is a stack of stride-2 3x3 convolutions followed by a dense
//! projection onto the latent vector. The decoder is a dense expansion to a
//! coarse feature map, a stack of stride-2 transposed convolutions and a
//! final 3x3 convolution to one channel. Encoder and decoder widths are
//! configured independently. No skip connection crosses the bottleneck:
//! everything the decoder sees passes through the latent vector.
//!
//! Intensities are mapped to `(hu - hu_center) / hu_scale` before encoding
//! and back after decoding; the reconstruction loss is the mean squared
//! error in those normalized units.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::image::{clamp_hu, ImageSlice};
use crate::nn::{self, Adam, Conv2d, ConvTranspose2d, Dense, Grads, Init, ParamSet};
use crate::phantom::PairedDataset;
use crate::rng::{self, tags};
use crate::{Error, Result};

/// A flat latent code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentVector(pub Vec<f64>);

impl LatentVector {
    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn distance(&self, other: &LatentVector) -> f64 {
        math::sqrt(self.0.iter().zip(&other.0).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CodecConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub latent_dim: usize,
    /// Output channels of each stride-2 encoder convolution.
    pub encoder_widths: Vec<usize>,
    /// Channels of the decoder feature maps, coarsest first. The first entry
    /// is the dense expansion; each further entry adds one 2x upsampling.
    pub decoder_widths: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hu_center: f64,
    pub hu_scale: f64,
}

impl Default for CodecConfig {
    fn default() -> Self {
        Self {
            image_height: 64,
            image_width: 64,
            latent_dim: 128,
            encoder_widths: vec![8, 16, 32],
            decoder_widths: vec![32, 16, 8, 8],
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 4,
            seed: 0,
            hu_center: -500.0,
            hu_scale: 500.0,
        }
    }
}

impl CodecConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_height == 0 || self.image_width == 0 {
            return Err(Error::validation("image size must be positive"));
        }
        if self.latent_dim < 1 {
            return Err(Error::validation("latent_dim must be at least 1"));
        }
        let pixels = self.image_height * self.image_width;
        if self.latent_dim > pixels {
            return Err(Error::validation(format!(
                "latent_dim {} exceeds the {pixels} image pixels",
                self.latent_dim
            )));
        }
        if self.epochs < 1 {
            return Err(Error::validation("epochs must be at least 1"));
        }
        if self.batch_size < 1 {
            return Err(Error::validation("batch_size must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !(self.hu_scale > 0.0) {
            return Err(Error::validation("learning_rate and hu_scale must be positive"));
        }
        if self.decoder_widths.is_empty() {
            return Err(Error::validation("decoder needs at least one width"));
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|w| *w == 0) {
            return Err(Error::validation("block widths must be positive"));
        }
        let ups = 1usize << (self.decoder_widths.len() - 1);
        if self.image_height % ups != 0 || self.image_width % ups != 0 {
            return Err(Error::validation(format!(
                "image size {}x{} is not divisible by the decoder upsampling factor {ups}",
                self.image_height, self.image_width
            )));
        }
        Ok(())
    }
}

/// Layer descriptors, rebuilt from the config on load.
#[derive(Debug, Clone, PartialEq)]
struct Layers {
    encoder: Vec<Conv2d>,
    to_latent: Dense,
    from_latent: Dense,
    seed_shape: (usize, usize, usize),
    upsample: Vec<ConvTranspose2d>,
    to_image: Conv2d,
    /// Per-pixel output offset, independent of the latent.
    template: usize,
}

fn build_layers(config: &CodecConfig, params: &mut ParamSet, rng: &mut rng::Rng) -> Layers {
    let mut hw = (config.image_height, config.image_width);
    let mut channels = 1;
    let mut encoder = Vec::new();
    for (i, &w) in config.encoder_widths.iter().enumerate() {
        let conv = Conv2d::new(params, &format!("enc.{i}"), channels, w, 3, 2, 1, hw, Init::He, rng);
        hw = (conv.geom.out_h, conv.geom.out_w);
        channels = w;
        encoder.push(conv);
    }
    let flat = channels * hw.0 * hw.1;
    let to_latent = Dense::new(params, "enc.latent", flat, config.latent_dim, Init::Lecun, rng);

    let ups = config.decoder_widths.len() - 1;
    let seed_shape = (
        config.decoder_widths[0],
        config.image_height >> ups,
        config.image_width >> ups,
    );
    let from_latent = Dense::new(
        params,
        "dec.expand",
        config.latent_dim,
        seed_shape.0 * seed_shape.1 * seed_shape.2,
        Init::He,
        rng,
    );
    let mut hw = (seed_shape.1, seed_shape.2);
    let mut upsample = Vec::new();
    for (i, pair) in config.decoder_widths.windows(2).enumerate() {
        let t = ConvTranspose2d::new(params, &format!("dec.up.{i}"), pair[0], pair[1], 4, 2, 1, hw, Init::He, rng);
        hw = (t.geom.out_h, t.geom.out_w);
        upsample.push(t);
    }
    let last = *config.decoder_widths.last().unwrap();
    let to_image = Conv2d::new(params, "dec.out", last, 1, 3, 1, 1, hw, Init::Lecun, rng);
    let template = params.add(
        "dec.template",
        &[config.image_height, config.image_width],
        alloc::vec![0.0; config.image_height * config.image_width],
    );
    Layers {
        encoder,
        to_latent,
        from_latent,
        seed_shape,
        upsample,
        to_image,
        template,
    }
}

/// Activations kept for backpropagation.
struct Trace {
    /// Inputs of every layer in forward order.
    inputs: Vec<Vec<f64>>,
    /// Pre-activations of every rectified layer in forward order.
    pre: Vec<Vec<f64>>,
}

/// A trained (or freshly initialized) encoder-decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct CodecModel {
    pub config: CodecConfig,
    params: ParamSet,
    layers: Layers,
    /// Mean reconstruction loss of each training epoch.
    pub loss_history: Vec<f64>,
    /// Mean reconstruction loss over the training set before the first
    /// update of the most recent `train_codec` call.
    pub initial_loss: Option<f64>,
    /// Largest latent displacement per HU observed when perturbing single
    /// pixels of a training image after training.
    pub lipschitz_per_hu: Option<f64>,
}

/// Creates a model with parameters drawn deterministically from
/// `config.seed`.
pub fn init_codec(config: &CodecConfig) -> Result<CodecModel> {
    config.validate()?;
    let mut params = ParamSet::default();
    let mut rng = rng::stream(config.seed, tags::CODEC_INIT);
    let layers = build_layers(config, &mut params, &mut rng);
    Ok(CodecModel {
        config: config.clone(),
        params,
        layers,
        loss_history: Vec::new(),
        initial_loss: None,
        lipschitz_per_hu: None,
    })
}

impl CodecModel {
    /// Rebuilds a model from stored parameters. The tensor names and shapes
    /// must match what `config` produces.
    pub fn from_parts(config: &CodecConfig, params: ParamSet) -> Result<Self> {
        let mut model = init_codec(config)?;
        if !model.params.same_layout(&params) {
            return Err(Error::Config(
                "stored codec parameters do not match the configured architecture".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    pub fn checksum(&self) -> [u8; 32] {
        self.params.checksum()
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_image(&self, image: &ImageSlice) -> Result<()> {
        let expected = (self.config.image_height, self.config.image_width);
        if image.dims() != expected {
            return Err(Error::shape(
                format!("{}x{} image", expected.0, expected.1),
                format!("{}x{} image", image.height(), image.width()),
            ));
        }
        Ok(())
    }

    fn normalize(&self, image: &ImageSlice) -> Vec<f64> {
        let (c, s) = (self.config.hu_center, self.config.hu_scale);
        image.pixels().iter().map(|v| (v - c) / s).collect()
    }

    fn encode_normalized(&self, x: &[f64], trace: Option<&mut Trace>) -> Vec<f64> {
        let mut trace = trace;
        let mut h = x.to_vec();
        for conv in &self.layers.encoder {
            let pre = conv.forward(&self.params, &h);
            let next = nn::leaky_relu(&pre);
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(core::mem::replace(&mut h, next));
                t.pre.push(pre);
            } else {
                h = next;
            }
        }
        let z = self.layers.to_latent.forward(&self.params, &h);
        if let Some(t) = trace {
            t.inputs.push(h);
        }
        z
    }

    fn decode_normalized(&self, z: &[f64], trace: Option<&mut Trace>) -> Vec<f64> {
        let mut trace = trace;
        let pre = self.layers.from_latent.forward(&self.params, z);
        let mut h = nn::leaky_relu(&pre);
        if let Some(t) = trace.as_deref_mut() {
            t.inputs.push(z.to_vec());
            t.pre.push(pre);
        }
        for up in &self.layers.upsample {
            let pre = up.forward(&self.params, &h);
            let next = nn::leaky_relu(&pre);
            if let Some(t) = trace.as_deref_mut() {
                t.inputs.push(core::mem::replace(&mut h, next));
                t.pre.push(pre);
            } else {
                h = next;
            }
        }
        let mut y = self.layers.to_image.forward(&self.params, &h);
        for (v, b) in y.iter_mut().zip(&self.params.tensors[self.layers.template].data) {
            *v += b;
        }
        if let Some(t) = trace {
            t.inputs.push(h);
        }
        y
    }

    /// Maps an image to its latent vector.
    pub fn encode(&self, image: &ImageSlice) -> Result<LatentVector> {
        self.check_image(image)?;
        let z = self.encode_normalized(&self.normalize(image), None);
        if let Some(i) = z.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric {
                step: i,
                what: "non-finite latent entry".into(),
            });
        }
        Ok(LatentVector(z))
    }

    /// Maps a latent vector to an image, clamped to the HU range.
    pub fn decode(&self, z: &LatentVector) -> Result<ImageSlice> {
        if z.len() != self.config.latent_dim {
            return Err(Error::shape(
                format!("latent of length {}", self.config.latent_dim),
                format!("latent of length {}", z.len()),
            ));
        }
        let y = self.decode_normalized(&z.0, None);
        let (c, s) = (self.config.hu_center, self.config.hu_scale);
        let hu = y.into_iter().map(|v| clamp_hu(v * s + c)).collect();
        ImageSlice::from_clamped(self.config.image_height, self.config.image_width, hu)
    }

    /// `decode(encode(image))`.
    pub fn reconstruct(&self, image: &ImageSlice) -> Result<ImageSlice> {
        self.decode(&self.encode(image)?)
    }

    /// Mean squared reconstruction error of one image in normalized units.
    pub fn reconstruction_loss(&self, image: &ImageSlice) -> Result<f64> {
        self.check_image(image)?;
        let x = self.normalize(image);
        let z = self.encode_normalized(&x, None);
        let y = self.decode_normalized(&z, None);
        Ok(mse(&y, &x))
    }

    /// Reconstruction loss of one image and its gradient with respect to
    /// every parameter.
    pub fn reconstruction_loss_grad(&self, image: &ImageSlice) -> Result<(f64, Grads)> {
        self.check_image(image)?;
        let mut grads = self.params.zeros_like();
        let loss = self.accumulate_grad(&self.normalize(image), &mut grads);
        Ok((loss, grads))
    }

    fn accumulate_grad(&self, x: &[f64], grads: &mut Grads) -> f64 {
        let mut enc = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let mut dec = Trace {
            inputs: Vec::new(),
            pre: Vec::new(),
        };
        let z = self.encode_normalized(x, Some(&mut enc));
        let y = self.decode_normalized(&z, Some(&mut dec));
        let n = x.len() as f64;
        let loss = mse(&y, x);
        let gy: Vec<f64> = y.iter().zip(x).map(|(a, b)| 2.0 * (a - b) / n).collect();

        // Decoder, last layer first. dec.inputs = [z, h0, h1, ..., h_last].
        let p = &self.params;
        for (acc, v) in grads.0[self.layers.template].iter_mut().zip(&gy) {
            *acc += v;
        }
        let last_in = dec.inputs.len() - 1;
        let mut g = self.layers.to_image.backward(p, &dec.inputs[last_in], &gy, grads);
        for (i, up) in self.layers.upsample.iter().enumerate().rev() {
            g = nn::leaky_relu_backward(&dec.pre[i + 1], &g);
            g = up.backward(p, &dec.inputs[i + 1], &g, grads);
        }
        g = nn::leaky_relu_backward(&dec.pre[0], &g);
        let gz = self.layers.from_latent.backward(p, &dec.inputs[0], &g, grads);

        // Encoder. enc.inputs = [x, h0, ..., h_last].
        let last_in = enc.inputs.len() - 1;
        let mut g = self.layers.to_latent.backward(p, &enc.inputs[last_in], &gz, grads);
        for (i, conv) in self.layers.encoder.iter().enumerate().rev() {
            g = nn::leaky_relu_backward(&enc.pre[i], &g);
            g = conv.backward(p, &enc.inputs[i], &g, grads);
        }
        loss
    }
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Progress of one training epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub mean_loss: f64,
}

/// Trains on every `A` and `B` image of `dataset` as independent samples.
pub fn train_codec(model: CodecModel, dataset: &PairedDataset) -> Result<CodecModel> {
    train_codec_observed(model, dataset, |_| {})
}

/// [`train_codec`] with a callback after every epoch.
pub fn train_codec_observed(
    mut model: CodecModel,
    dataset: &PairedDataset,
    mut on_epoch: impl FnMut(EpochReport),
) -> Result<CodecModel> {
    model.config.validate()?;
    if dataset.is_empty() {
        return Err(Error::validation("cannot train the codec on an empty dataset"));
    }
    let samples: Vec<Vec<f64>> = dataset
        .all_images()
        .map(|img| {
            model.check_image(img)?;
            Ok(model.normalize(img))
        })
        .collect::<Result<_>>()?;

    if model.loss_history.is_empty() {
        // Start the per-pixel offset at the mean training image so the
        // convolutional path only has to model deviations from it.
        let inv = 1.0 / samples.len() as f64;
        let t = &mut model.params.tensors[model.layers.template].data;
        t.iter_mut().for_each(|v| *v = 0.0);
        for x in &samples {
            for (acc, v) in t.iter_mut().zip(x) {
                *acc += v * inv;
            }
        }
    }

    let initial = samples
        .iter()
        .map(|x| mse(&model.decode_normalized(&model.encode_normalized(x, None), None), x))
        .sum::<f64>()
        / samples.len() as f64;
    model.initial_loss = Some(initial);

    let cfg = model.config.clone();
    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut rng = rng::stream(cfg.seed, tags::CODEC_SHUFFLE);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = model.params.zeros_like();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, chunk) in order.chunks(cfg.batch_size).enumerate() {
            grads.zero();
            let mut batch_loss = 0.0;
            for &i in chunk {
                batch_loss += model.accumulate_grad(&samples[i], &mut grads);
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch,
                    loss: batch_loss / chunk.len() as f64,
                });
            }
            grads.scale(1.0 / chunk.len() as f64);
            opt.step(&mut model.params, &grads);
            total += batch_loss;
        }
        let mean_loss = total / samples.len() as f64;
        model.loss_history.push(mean_loss);
        on_epoch(EpochReport { epoch, mean_loss });
    }
    model.lipschitz_per_hu = Some(estimate_lipschitz(&model, dataset.pairs[0].image_b.pixels(), 100)?);
    Ok(model)
}

/// Largest `|encode(x + e_p) - encode(x)|` over `probes` random pixels `p`,
/// with a 1 HU perturbation.
pub fn estimate_lipschitz(model: &CodecModel, pixels: &[f64], probes: usize) -> Result<f64> {
    let (c, s) = (model.config.hu_center, model.config.hu_scale);
    let x: Vec<f64> = pixels.iter().map(|v| (v - c) / s).collect();
    let base = model.encode_normalized(&x, None);
    let mut rng = rng::stream(model.config.seed, tags::CODEC_LIPSCHITZ);
    let mut worst: f64 = 0.0;
    let mut xp = x.clone();
    for _ in 0..probes {
        let p = rng.random_range(0..x.len());
        xp[p] = x[p] + 1.0 / s;
        let z = model.encode_normalized(&xp, None);
        xp[p] = x[p];
        let d = math::sqrt(z.iter().zip(&base).map(|(a, b)| (a - b) * (a - b)).sum::<f64>());
        if !d.is_finite() {
            return Err(Error::Numeric {
                step: p,
                what: "non-finite latent during Lipschitz probe".into(),
            });
        }
        worst = worst.max(d);
    }
    Ok(worst)
}
