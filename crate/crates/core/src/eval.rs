//! End-to-end standardization and the three-condition evaluation.
//!
//! For every test pair and tumor ROI, features are extracted from the
//! non-standard image `A`, the standard image `B`, the codec reconstruction
//! of `A`, and the standardized image `A'`. Each condition is compared
//! against `B`:
//!
//! * `baseline`: `A` itself,
//! * `encoder-decoder`: `decode(encode(A))`,
//! * `latent-diffusion`: `decode(sample(encode(A)))`.
//!
//! Class concordance is computed per ROI and summarized as mean and standard
//! deviation over ROIs. Before pooling a class, each feature is min-max
//! scaled with the range it spans over the `A` and `B` images of the test
//! cohort, so the scaling does not depend on the models being compared.
//! Relative errors are pooled over all ROIs and features.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::codec::{CodecModel, LatentVector};
use crate::diffusion::{standardize_latent, DenoiserModel, NoiseSchedule};
use crate::image::ImageSlice;
use crate::metrics::{self, FeatureNormalizer, ReproducibleCount};
use crate::phantom::{ImagePair, PairedDataset};
use crate::radiomics::{extract_all, FeatureClass, FeatureVector, RadiomicsConfig};
use crate::{rng, Error, Result};

/// Image to latent and back.
pub trait ImageCodec {
    fn latent_dim(&self) -> usize;
    fn image_dims(&self) -> (usize, usize);
    fn encode(&self, image: &ImageSlice) -> Result<LatentVector>;
    fn decode(&self, z: &LatentVector) -> Result<ImageSlice>;
}

impl ImageCodec for CodecModel {
    fn latent_dim(&self) -> usize {
        CodecModel::latent_dim(self)
    }

    fn image_dims(&self) -> (usize, usize) {
        (self.config.image_height, self.config.image_width)
    }

    fn encode(&self, image: &ImageSlice) -> Result<LatentVector> {
        CodecModel::encode(self, image)
    }

    fn decode(&self, z: &LatentVector) -> Result<ImageSlice> {
        CodecModel::decode(self, z)
    }
}

/// Maps a non-standard latent to the standard domain.
pub trait LatentTranslator {
    fn latent_dim(&self) -> usize;
    fn translate(&self, z_a: &LatentVector, seed: u64) -> Result<LatentVector>;
}

/// The trained denoiser run through the full reverse chain.
pub struct DiffusionTranslator<'a> {
    pub model: &'a DenoiserModel,
    pub schedule: NoiseSchedule,
    /// Bound on the implied `x_0` at each reverse step, if any.
    pub x0_clip: Option<f64>,
}

impl LatentTranslator for DiffusionTranslator<'_> {
    fn latent_dim(&self) -> usize {
        self.model.config.latent_dim
    }

    fn translate(&self, z_a: &LatentVector, seed: u64) -> Result<LatentVector> {
        standardize_latent(self.model, z_a, &self.schedule, self.x0_clip, seed)
    }
}

/// Pixels as the latent; for sanity checks.
#[derive(Debug, Clone, Copy)]
pub struct IdentityCodec {
    pub height: usize,
    pub width: usize,
}

impl ImageCodec for IdentityCodec {
    fn latent_dim(&self) -> usize {
        self.height * self.width
    }

    fn image_dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    fn encode(&self, image: &ImageSlice) -> Result<LatentVector> {
        Ok(LatentVector(image.pixels().to_vec()))
    }

    fn decode(&self, z: &LatentVector) -> Result<ImageSlice> {
        ImageSlice::from_clamped(self.height, self.width, z.0.clone())
    }
}

/// Returns its input.
#[derive(Debug, Clone, Copy)]
pub struct IdentityTranslator {
    pub latent_dim: usize,
}

impl LatentTranslator for IdentityTranslator {
    fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    fn translate(&self, z_a: &LatentVector, _seed: u64) -> Result<LatentVector> {
        Ok(z_a.clone())
    }
}

/// Checks that the codec and translator agree on the latent length.
pub fn check_compatible<C: ImageCodec + ?Sized, T: LatentTranslator + ?Sized>(codec: &C, translator: &T) -> Result<()> {
    if codec.latent_dim() != translator.latent_dim() {
        return Err(Error::Config(format!(
            "codec latent_dim {} differs from translator latent_dim {}",
            codec.latent_dim(),
            translator.latent_dim()
        )));
    }
    Ok(())
}

/// `decode(translate(encode(A)))`.
pub fn standardize_image<C: ImageCodec + ?Sized, T: LatentTranslator + ?Sized>(
    codec: &C,
    translator: &T,
    image: &ImageSlice,
    seed: u64,
) -> Result<ImageSlice> {
    check_compatible(codec, translator)?;
    if image.dims() != codec.image_dims() {
        return Err(Error::Config(format!(
            "image is {:?} but the codec expects {:?}",
            image.dims(),
            codec.image_dims()
        )));
    }
    let z = codec.encode(image)?;
    let z_std = translator.translate(&z, seed)?;
    codec.decode(&z_std)
}

/// Evaluation conditions, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Condition {
    Baseline,
    EncoderDecoder,
    LatentDiffusion,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::Baseline, Condition::EncoderDecoder, Condition::LatentDiffusion];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Baseline => "baseline",
            Condition::EncoderDecoder => "encoder-decoder",
            Condition::LatentDiffusion => "latent-diffusion",
        }
    }
}

/// Evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub radiomics: RadiomicsConfig,
    pub reproducible_threshold: f64,
    /// Thresholds of the RE curve, ascending.
    pub curve_thresholds: Vec<f64>,
    /// Base seed of the sampler; each pair uses a sub-seed of it.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            radiomics: RadiomicsConfig::default(),
            reproducible_threshold: metrics::REPRODUCIBLE_RE,
            curve_thresholds: (1..=20).map(|i| i as f64 * 0.025).collect(),
            seed: 0,
        }
    }
}

/// Sampler seed of the `index`-th test pair.
pub fn pair_seed(seed: u64, index: usize) -> u64 {
    rng::mix(seed, index as u64)
}

/// Features of one tumor ROI in all four images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoiFeatures {
    pub slice_id: String,
    pub roi_label: u8,
    pub a: FeatureVector,
    pub b: FeatureVector,
    pub recon: FeatureVector,
    pub standardized: FeatureVector,
}

impl RoiFeatures {
    pub fn condition(&self, c: Condition) -> &FeatureVector {
        match c {
            Condition::Baseline => &self.a,
            Condition::EncoderDecoder => &self.recon,
            Condition::LatentDiffusion => &self.standardized,
        }
    }
}

/// Runs the models on one pair and extracts features of every ROI.
pub fn pair_features<C: ImageCodec + ?Sized, T: LatentTranslator + ?Sized>(
    pair: &ImagePair,
    codec: &C,
    translator: &T,
    radiomics: &RadiomicsConfig,
    seed: u64,
) -> Result<Vec<RoiFeatures>> {
    let recon = codec.decode(&codec.encode(&pair.image_a)?)?;
    let standardized = standardize_image(codec, translator, &pair.image_a, seed)?;
    pair.rois
        .iter()
        .map(|roi| {
            Ok(RoiFeatures {
                slice_id: pair.slice_id.clone(),
                roi_label: roi.label,
                a: extract_all(&pair.image_a, &roi.mask, radiomics)?,
                b: extract_all(&pair.image_b, &roi.mask, radiomics)?,
                recon: extract_all(&recon, &roi.mask, radiomics)?,
                standardized: extract_all(&standardized, &roi.mask, radiomics)?,
            })
        })
        .collect()
}

/// Class concordance summarized over ROIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassCcc {
    pub class: FeatureClass,
    /// `None` when no ROI has a defined concordance.
    pub mean: Option<f64>,
    pub std: Option<f64>,
    /// ROIs with a defined concordance.
    pub n: usize,
}

/// Pooled relative error of one feature across ROIs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRe {
    pub name: String,
    pub class: FeatureClass,
    /// `None` when the error is undefined for every ROI.
    pub mean_re: Option<f64>,
    pub reproducible: usize,
    pub defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub condition: Condition,
    pub ccc_per_class: Vec<ClassCcc>,
    pub reproducible: ReproducibleCount,
    pub re_curve: Vec<(f64, usize)>,
    pub re_per_feature: Vec<FeatureRe>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsBlock {
    pub n_pairs: usize,
    pub n_rois: usize,
    pub threshold: f64,
    pub conditions: Vec<ConditionMetrics>,
}

impl MetricsBlock {
    pub fn condition(&self, c: Condition) -> Option<&ConditionMetrics> {
        self.conditions.iter().find(|m| m.condition == c)
    }

    pub fn class_ccc(&self, c: Condition, class: FeatureClass) -> Option<f64> {
        self.condition(c)?
            .ccc_per_class
            .iter()
            .find(|x| x.class == class)
            .and_then(|x| x.mean)
    }
}

/// Metrics of all conditions from extracted ROI features.
pub fn metrics_from_features(rois: &[RoiFeatures], n_pairs: usize, config: &EvalConfig) -> Result<MetricsBlock> {
    if rois.is_empty() {
        return Err(Error::validation("no ROIs to evaluate"));
    }
    let normalizer = FeatureNormalizer::fit(rois.iter().flat_map(|r| [&r.a, &r.b]))?;
    let layout = &rois[0].b;
    let mut conditions = Vec::new();
    for cond in Condition::ALL {
        let mut ccc_per_class = Vec::new();
        for class in FeatureClass::ALL {
            let mut values = Vec::new();
            for r in rois {
                let res = metrics::ccc_by_class(r.condition(cond), &r.b, class, Some(&normalizer))?;
                if let Some(v) = res.ccc {
                    values.push(v);
                }
            }
            let (mean, std, n) = match metrics::mean_std(values) {
                Some((m, s, n)) => (Some(m), Some(s), n),
                None => (None, None, 0),
            };
            ccc_per_class.push(ClassCcc { class, mean, std, n });
        }

        let k = layout.len();
        let mut pooled = Vec::with_capacity(rois.len() * k);
        let mut sums = alloc::vec![0.0; k];
        let mut defined = alloc::vec![0usize; k];
        let mut good = alloc::vec![0usize; k];
        for r in rois {
            for (i, e) in metrics::relative_errors(r.condition(cond), &r.b)?.into_iter().enumerate() {
                if let Some(re) = e.re {
                    sums[i] += re;
                    defined[i] += 1;
                    if re < config.reproducible_threshold {
                        good[i] += 1;
                    }
                }
                pooled.push(e.re);
            }
        }
        let re_per_feature = layout
            .features
            .iter()
            .enumerate()
            .map(|(i, f)| FeatureRe {
                name: f.name.clone(),
                class: f.class,
                mean_re: (defined[i] > 0).then(|| sums[i] / defined[i] as f64),
                reproducible: good[i],
                defined: defined[i],
            })
            .collect();
        conditions.push(ConditionMetrics {
            condition: cond,
            ccc_per_class,
            reproducible: ReproducibleCount::from_errors(&pooled, config.reproducible_threshold),
            re_curve: metrics::re_curve_from_errors(&pooled, &config.curve_thresholds)?,
            re_per_feature,
        });
    }
    Ok(MetricsBlock {
        n_pairs,
        n_rois: rois.len(),
        threshold: config.reproducible_threshold,
        conditions,
    })
}

/// Sequential evaluation of a test split.
pub fn evaluate<C: ImageCodec + ?Sized, T: LatentTranslator + ?Sized>(
    testset: &PairedDataset,
    codec: &C,
    translator: &T,
    config: &EvalConfig,
) -> Result<MetricsBlock> {
    if testset.is_empty() {
        return Err(Error::validation("test split is empty"));
    }
    check_compatible(codec, translator)?;
    let mut rois = Vec::new();
    for (i, pair) in testset.pairs.iter().enumerate() {
        rois.extend(pair_features(pair, codec, translator, &config.radiomics, pair_seed(config.seed, i))?);
    }
    metrics_from_features(&rois, testset.len(), config)
}
