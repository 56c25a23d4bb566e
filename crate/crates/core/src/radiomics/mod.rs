//! Radiomic features of a 2-D region of interest.
//!
//! Six classes are extracted, always in this order:
//!
//! | class | features |
//! |-------|----------|
//! | GOH   | `goh_bin_0` .. `goh_bin_{n-1}`, `goh_entropy` |
//! | GLCM  | energy, contrast, correlation, homogeneity, entropy, dissimilarity |
//! | GLRLM | sre, lre, gln, rln, rp |
//! | ID    | mean, median, std, min, max, range, skewness, kurtosis, energy |
//! | IH    | entropy, uniformity, p10, p50, p90 |
//! | NID   | coarseness, contrast, busyness, complexity, strength |
//!
//! With the default eight orientation bins this gives
//! [`DEFAULT_FEATURE_COUNT`] = 39 features. Texture classes (GLCM, GLRLM,
//! NID) work on gray levels from [`quantize`]; the others use raw HU.
//! Logarithms are base 2 and standard deviations are population moments.

mod intensity;
mod texture;

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use serde::{Deserialize, Serialize};

pub use intensity::{goh_features, goh_histogram, intensity_direct_features, intensity_histogram_features};
pub use texture::{
    glcm_features, glcm_matrix, glcm_matrix_averaged, glrlm_features, glrlm_matrix, nid_features,
    ngtdm_table, NgtdmTable, RunLengthMatrix, COARSENESS_CAP,
};

use crate::image::{ImageSlice, Mask};
use crate::{Error, Result};

/// Feature count produced by [`RadiomicsConfig::default`].
pub const DEFAULT_FEATURE_COUNT: usize = 39;

/// The six feature classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FeatureClass {
    Goh,
    Glcm,
    Glrlm,
    Id,
    Ih,
    Nid,
}

impl FeatureClass {
    pub const ALL: [FeatureClass; 6] = [
        FeatureClass::Goh,
        FeatureClass::Glcm,
        FeatureClass::Glrlm,
        FeatureClass::Id,
        FeatureClass::Ih,
        FeatureClass::Nid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureClass::Goh => "GOH",
            FeatureClass::Glcm => "GLCM",
            FeatureClass::Glrlm => "GLRLM",
            FeatureClass::Id => "ID",
            FeatureClass::Ih => "IH",
            FeatureClass::Nid => "NID",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }
}

impl fmt::Display for FeatureClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Gray-level quantization over a HU window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantizationSpec {
    pub n_levels: usize,
    pub low: f64,
    pub high: f64,
}

impl Default for QuantizationSpec {
    fn default() -> Self {
        Self {
            n_levels: 32,
            low: -1000.0,
            high: 400.0,
        }
    }
}

impl QuantizationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 2 || self.n_levels > u16::MAX as usize {
            return Err(Error::validation("n_levels must be in 2..=65535"));
        }
        if !(self.low.is_finite() && self.high.is_finite() && self.low < self.high) {
            return Err(Error::validation("quantization window needs low < high"));
        }
        Ok(())
    }

    /// Level in `1..=n_levels` of a HU value.
    pub fn level(&self, v: f64) -> u16 {
        let n = self.n_levels as f64;
        let x = math::floor((v - self.low) / (self.high - self.low) * n) + 1.0;
        x.clamp(1.0, n) as u16
    }
}

/// Quantized ROI. Level 0 marks pixels outside the mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quantized {
    pub height: usize,
    pub width: usize,
    pub n_levels: usize,
    pub levels: Vec<u16>,
}

impl Quantized {
    /// Builds a grid from explicit levels; mostly useful for fixtures.
    pub fn from_levels(height: usize, width: usize, n_levels: usize, levels: Vec<u16>) -> Result<Self> {
        if levels.len() != height * width {
            return Err(Error::shape(
                alloc::format!("{} levels", height * width),
                alloc::format!("{} levels", levels.len()),
            ));
        }
        if levels.iter().any(|&l| l as usize > n_levels) {
            return Err(Error::validation("level above n_levels"));
        }
        if levels.iter().all(|&l| l == 0) {
            return Err(Error::validation("quantized region is empty"));
        }
        Ok(Self {
            height,
            width,
            n_levels,
            levels,
        })
    }

    pub fn at(&self, r: isize, c: isize) -> u16 {
        if r < 0 || c < 0 || r as usize >= self.height || c as usize >= self.width {
            return 0;
        }
        self.levels[r as usize * self.width + c as usize]
    }

    pub fn count(&self) -> usize {
        self.levels.iter().filter(|&&l| l > 0).count()
    }
}

pub(crate) fn check_mask(image: &ImageSlice, mask: &Mask) -> Result<()> {
    if image.dims() != mask.dims() {
        return Err(Error::shape(
            alloc::format!("mask of {:?}", image.dims()),
            alloc::format!("mask of {:?}", mask.dims()),
        ));
    }
    if mask.is_empty() {
        return Err(Error::validation("region of interest is empty"));
    }
    Ok(())
}

/// Maps in-mask pixels to gray levels `1..=n_levels`.
pub fn quantize(image: &ImageSlice, mask: &Mask, q: &QuantizationSpec) -> Result<Quantized> {
    q.validate()?;
    check_mask(image, mask)?;
    let levels = image
        .pixels()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &m)| if m { q.level(v) } else { 0 })
        .collect();
    Ok(Quantized {
        height: image.height(),
        width: image.width(),
        n_levels: q.n_levels,
        levels,
    })
}

/// Extraction settings for all classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RadiomicsConfig {
    pub quantization: QuantizationSpec,
    pub glcm_offsets: Vec<(i32, i32)>,
    pub glrlm_directions: Vec<(i32, i32)>,
    pub ih_bins: usize,
    pub goh_bins: usize,
    pub nid_radius: usize,
}

pub const FOUR_DIRECTIONS: [(i32, i32); 4] = [(0, 1), (1, 1), (1, 0), (1, -1)];

impl Default for RadiomicsConfig {
    fn default() -> Self {
        Self {
            quantization: QuantizationSpec::default(),
            glcm_offsets: FOUR_DIRECTIONS.to_vec(),
            glrlm_directions: FOUR_DIRECTIONS.to_vec(),
            ih_bins: 32,
            goh_bins: 8,
            nid_radius: 1,
        }
    }
}

impl RadiomicsConfig {
    pub fn validate(&self) -> Result<()> {
        self.quantization.validate()?;
        if self.glcm_offsets.is_empty() || self.glcm_offsets.contains(&(0, 0)) {
            return Err(Error::validation("GLCM offsets must be non-empty and non-zero"));
        }
        if self.glrlm_directions.is_empty() || self.glrlm_directions.contains(&(0, 0)) {
            return Err(Error::validation("GLRLM directions must be non-empty and non-zero"));
        }
        if self.ih_bins < 2 || self.goh_bins < 2 {
            return Err(Error::validation("histograms need at least 2 bins"));
        }
        if self.nid_radius < 1 {
            return Err(Error::validation("NID radius must be at least 1"));
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        (self.goh_bins + 1) + 6 + 5 + 9 + 5 + 5
    }

    /// Feature names and classes in extraction order.
    pub fn feature_layout(&self) -> Vec<(String, FeatureClass)> {
        let mut out = Vec::with_capacity(self.feature_count());
        for b in 0..self.goh_bins {
            out.push((alloc::format!("goh_bin_{b}"), FeatureClass::Goh));
        }
        out.push(("goh_entropy".into(), FeatureClass::Goh));
        let fixed: [(FeatureClass, &[&str]); 5] = [
            (FeatureClass::Glcm, &texture::GLCM_NAMES),
            (FeatureClass::Glrlm, &texture::GLRLM_NAMES),
            (FeatureClass::Id, &intensity::ID_NAMES),
            (FeatureClass::Ih, &intensity::IH_NAMES),
            (FeatureClass::Nid, &texture::NID_NAMES),
        ];
        for (class, names) in fixed {
            let prefix = match class {
                FeatureClass::Glcm => "glcm",
                FeatureClass::Glrlm => "glrlm",
                FeatureClass::Id => "id",
                FeatureClass::Ih => "ih",
                _ => "nid",
            };
            for n in names {
                out.push((alloc::format!("{prefix}_{n}"), class));
            }
        }
        out
    }
}

/// One named feature value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub class: FeatureClass,
    pub value: f64,
}

/// Ordered features of one ROI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub features: Vec<Feature>,
    pub config: RadiomicsConfig,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn values(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.value).collect()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.features.iter().find(|f| f.name == name).map(|f| f.value)
    }

    pub fn same_layout(&self, other: &FeatureVector) -> bool {
        self.features.len() == other.features.len()
            && self
                .features
                .iter()
                .zip(&other.features)
                .all(|(a, b)| a.name == b.name && a.class == b.class)
    }

    pub fn of_class(&self, class: FeatureClass) -> impl Iterator<Item = &Feature> {
        self.features.iter().filter(move |f| f.class == class)
    }
}

fn tag(class: FeatureClass) -> impl Fn(Error) -> Error {
    move |e| Error::Extraction {
        class: class.as_str(),
        source: alloc::boxed::Box::new(e),
    }
}

/// Every class of features for the ROI `mask` of `image`.
pub fn extract_all(image: &ImageSlice, mask: &Mask, config: &RadiomicsConfig) -> Result<FeatureVector> {
    config.validate()?;
    check_mask(image, mask)?;
    let q = quantize(image, mask, &config.quantization)?;
    let mut values = Vec::with_capacity(config.feature_count());
    values.extend(goh_features(image, mask, config.goh_bins).map_err(tag(FeatureClass::Goh))?);
    values.extend(glcm_features(&q, &config.glcm_offsets).map_err(tag(FeatureClass::Glcm))?);
    values.extend(glrlm_features(&q, &config.glrlm_directions).map_err(tag(FeatureClass::Glrlm))?);
    values.extend(intensity_direct_features(image, mask).map_err(tag(FeatureClass::Id))?);
    values.extend(
        intensity_histogram_features(image, mask, config.ih_bins, &config.quantization)
            .map_err(tag(FeatureClass::Ih))?,
    );
    values.extend(nid_features(&q, config.nid_radius).map_err(tag(FeatureClass::Nid))?);

    let features: Vec<Feature> = config
        .feature_layout()
        .into_iter()
        .zip(values)
        .map(|((name, class), value)| Feature { name, class, value })
        .collect();
    if let Some(f) = features.iter().find(|f| !f.value.is_finite()) {
        return Err(Error::Extraction {
            class: f.class.as_str(),
            source: alloc::boxed::Box::new(Error::Numeric {
                step: 0,
                what: alloc::format!("feature {} is not finite", f.name),
            }),
        });
    }
    Ok(FeatureVector {
        features,
        config: config.clone(),
    })
}
