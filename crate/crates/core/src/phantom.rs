//! Synthetic paired chest-phantom slices.
//!
//! A fixed 3-D object (an elliptical body with two lungs and spherical
//! tumors carrying a band-limited random texture) is sliced at a series of
//! axial positions. Each ground-truth slice is then "reconstructed" twice:
//! with a smooth kernel (the non-standard image `A`) and a sharp kernel (the
//! standard image `B`). A kernel is a radially symmetric modulation transfer
//! function applied in the frequency domain plus additive white noise shaped
//! by the same MTF.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::fft;
use crate::image::{clamp_hu, ImageSlice, LabelMask, Mask};
use crate::rng::{self, tags};
use crate::{Error, Result};

/// An axis-aligned ellipse in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ellipse {
    /// `(row, col)` of the center.
    pub center: (f64, f64),
    /// Semi-axes along rows and columns.
    pub semi_axes: (f64, f64),
}

impl Ellipse {
    fn scaled(&self, factor: f64) -> Ellipse {
        Ellipse {
            center: self.center,
            semi_axes: (self.semi_axes.0 * factor, self.semi_axes.1 * factor),
        }
    }

    #[inline]
    fn contains(&self, row: f64, col: f64) -> bool {
        let dr = (row - self.center.0) / self.semi_axes.0;
        let dc = (col - self.center.1) / self.semi_axes.1;
        dr * dr + dc * dc <= 1.0
    }
}

/// A spherical tumor with a band-limited texture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TumorSpec {
    /// `(row, col)` of the center, in pixels.
    pub center: (f64, f64),
    /// Axial position of the center, in mm.
    pub center_z_mm: f64,
    pub radius_px: f64,
    pub base_hu: f64,
    /// Standard deviation of the texture, in HU.
    pub texture_amplitude_hu: f64,
    pub correlation_length_mm: f64,
}

/// Geometry and materials of the synthetic phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhantomSpec {
    pub height: usize,
    pub width: usize,
    pub spacing_mm: f64,
    pub background_hu: f64,
    pub body: Ellipse,
    pub body_hu: f64,
    pub lungs: Vec<Ellipse>,
    pub lung_hu: f64,
    pub tumors: Vec<TumorSpec>,
    /// Standard deviation of white material noise in the ground truth, HU.
    pub noise_hu: f64,
    /// Number of plane-wave modes in each tumor texture.
    pub texture_modes: usize,
    /// Axial position of the slice, in mm.
    pub slice_z_mm: f64,
    /// Relative change of body and lung axes per mm of axial offset.
    pub axial_taper: f64,
    /// ROI masks are shrunk by this many pixels from the tumor edge so
    /// they do not pick up partial-volume blur from the lung boundary.
    #[serde(default)]
    pub roi_margin_px: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        let tumor = |row, col, radius, base, amp| TumorSpec {
            center: (row, col),
            center_z_mm: 0.0,
            radius_px: radius,
            base_hu: base,
            texture_amplitude_hu: amp,
            correlation_length_mm: 2.0,
        };
        Self {
            height: 64,
            width: 64,
            spacing_mm: 1.0,
            background_hu: -1000.0,
            body: Ellipse {
                center: (32.0, 32.0),
                semi_axes: (27.0, 30.0),
            },
            body_hu: 40.0,
            lungs: alloc::vec![
                Ellipse {
                    center: (30.0, 18.0),
                    semi_axes: (18.0, 10.0),
                },
                Ellipse {
                    center: (30.0, 46.0),
                    semi_axes: (18.0, 10.0),
                },
            ],
            lung_hu: -850.0,
            tumors: alloc::vec![
                tumor(30.0, 18.0, 8.4, 40.0, 60.0),
                tumor(22.0, 46.0, 7.0, 30.0, 50.0),
                tumor(38.0, 46.0, 7.0, 60.0, 70.0),
            ],
            noise_hu: 2.0,
            texture_modes: 6,
            slice_z_mm: 0.0,
            axial_taper: 0.0,
            roi_margin_px: 2.0,
        }
    }
}

impl PhantomSpec {
    /// Checks geometry and material invariants.
    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::validation("phantom dimensions must be positive"));
        }
        if !(self.spacing_mm > 0.0) {
            return Err(Error::validation("pixel spacing must be positive"));
        }
        if !(self.roi_margin_px >= 0.0) {
            return Err(Error::validation("ROI margin must be non-negative"));
        }
        if !(self.noise_hu >= 0.0) {
            return Err(Error::validation("noise level must be non-negative"));
        }
        for e in core::iter::once(&self.body).chain(&self.lungs) {
            if !(e.semi_axes.0 > 0.0 && e.semi_axes.1 > 0.0) {
                return Err(Error::validation("ellipse semi-axes must be positive"));
            }
        }
        for (i, t) in self.tumors.iter().enumerate() {
            if !(t.radius_px > 0.0) {
                return Err(Error::validation(format!(
                    "tumor {i}: radius must be positive, got {}",
                    t.radius_px
                )));
            }
            if !(t.texture_amplitude_hu >= 0.0 && t.correlation_length_mm > 0.0) {
                return Err(Error::validation(format!(
                    "tumor {i}: texture amplitude must be non-negative and correlation length positive"
                )));
            }
            let inside = self.lungs.iter().any(|lung| {
                (0..64).all(|k| {
                    let a = 2.0 * PI * k as f64 / 64.0;
                    lung.contains(
                        t.center.0 + t.radius_px * math::sin(a),
                        t.center.1 + t.radius_px * math::cos(a),
                    )
                })
            });
            if !inside {
                return Err(Error::validation(format!(
                    "tumor {i} at ({}, {}) with radius {} does not lie inside a lung region",
                    t.center.0, t.center.1, t.radius_px
                )));
            }
        }
        if self.tumors.len() > 255 {
            return Err(Error::validation("at most 255 tumors are supported"));
        }
        if !self.tumors.is_empty() && self.texture_modes == 0 {
            return Err(Error::validation("texture_modes must be at least 1"));
        }
        Ok(())
    }

    /// Cross-section radius of tumor `i` at the current slice position.
    fn section_radius(&self, t: &TumorSpec) -> f64 {
        let dz = (self.slice_z_mm - t.center_z_mm) / self.spacing_mm;
        let r2 = t.radius_px * t.radius_px - dz * dz;
        if r2 > 0.0 {
            math::sqrt(r2)
        } else {
            0.0
        }
    }

    /// ROIs of the tumors cut by the current slice, labelled `1..`.
    pub fn tumor_rois(&self) -> Vec<TumorRoi> {
        self.tumors
            .iter()
            .enumerate()
            .filter_map(|(i, t)| {
                let radius = self.section_radius(t) - self.roi_margin_px;
                if radius <= 0.0 {
                    return None;
                }
                let mask = Mask::from_fn(self.height, self.width, |r, c| {
                    let dr = r as f64 - t.center.0;
                    let dc = c as f64 - t.center.1;
                    dr * dr + dc * dc <= radius * radius
                });
                TumorRoi::new((i + 1) as u8, t.center, radius, mask).ok()
            })
            .collect()
    }
}

/// One tumor cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorRoi {
    pub label: u8,
    pub center: (f64, f64),
    pub radius_px: f64,
    pub mask: Mask,
}

impl TumorRoi {
    /// Builds an ROI, checking the mask is non-empty and connected.
    pub fn new(label: u8, center: (f64, f64), radius_px: f64, mask: Mask) -> Result<Self> {
        if mask.is_empty() {
            return Err(Error::validation(format!("ROI {label}: empty mask")));
        }
        if !mask.is_connected() {
            return Err(Error::validation(format!("ROI {label}: mask is not connected")));
        }
        if !(radius_px > 0.0) {
            return Err(Error::validation(format!("ROI {label}: radius must be positive")));
        }
        Ok(Self {
            label,
            center,
            radius_px,
            mask,
        })
    }

    /// Recovers an ROI from one label of a label map: the center is the mask
    /// centroid and the radius the equal-area disk radius.
    pub fn from_label(labels: &LabelMask, label: u8) -> Result<Self> {
        let mask = labels.mask_of(label);
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0usize);
        for r in 0..mask.height() {
            for c in 0..mask.width() {
                if mask.contains(r, c) {
                    sr += r as f64;
                    sc += c as f64;
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::validation(format!("ROI {label}: empty mask")));
        }
        let center = (sr / n as f64, sc / n as f64);
        Self::new(label, center, math::sqrt(n as f64 / PI), mask)
    }
}

/// Writes all ROIs into one label map.
pub fn label_mask(height: usize, width: usize, rois: &[TumorRoi]) -> LabelMask {
    let mut labels = alloc::vec![0u8; height * width];
    for roi in rois {
        for (l, b) in labels.iter_mut().zip(roi.mask.bits()) {
            if *b {
                *l = roi.label;
            }
        }
    }
    LabelMask {
        height,
        width,
        labels,
    }
}

/// Reads every ROI back out of a label map.
pub fn rois_from_label_mask(labels: &LabelMask) -> Result<Vec<TumorRoi>> {
    labels
        .present_labels()
        .into_iter()
        .map(|l| TumorRoi::from_label(labels, l))
        .collect()
}

struct TextureMode {
    /// Wave vector in cycles per mm: (row, col, axial).
    k: (f64, f64, f64),
    phase: f64,
}

fn texture_modes(t: &TumorSpec, count: usize, rng: &mut rng::Rng) -> Vec<TextureMode> {
    let f0 = 1.0 / (4.0 * t.correlation_length_mm);
    (0..count)
        .map(|_| {
            let f = f0 * rng.random_range(0.7..1.3);
            let theta = rng.random_range(0.0..PI);
            let kz = f0 * rng.random_range(-1.0..1.0);
            TextureMode {
                k: (f * math::sin(theta), f * math::cos(theta), kz),
                phase: rng.random_range(0.0..2.0 * PI),
            }
        })
        .collect()
}

/// Renders the ground-truth slice of the phantom at `spec.slice_z_mm`.
///
/// `seed` fixes the 3-D object: tumor textures are drawn from it, so slices
/// of the same seed at nearby axial positions share texture. The material
/// noise is drawn from a stream keyed by both the seed and the slice
/// position.
pub fn generate_ground_truth(spec: &PhantomSpec, seed: u64) -> Result<ImageSlice> {
    spec.validate()?;
    let (h, w) = (spec.height, spec.width);
    let z = spec.slice_z_mm;
    let scale = (1.0 + spec.axial_taper * z).max(0.5);
    let body = spec.body.scaled(scale);
    let lungs: Vec<Ellipse> = spec.lungs.iter().map(|l| l.scaled(scale)).collect();

    let mut object_rng = rng::stream(seed, tags::PHANTOM);
    let textures: Vec<Vec<TextureMode>> = spec
        .tumors
        .iter()
        .map(|t| texture_modes(t, spec.texture_modes, &mut object_rng))
        .collect();

    let mut pixels = alloc::vec![spec.background_hu; h * w];
    for r in 0..h {
        for c in 0..w {
            let (rf, cf) = (r as f64, c as f64);
            let p = &mut pixels[r * w + c];
            if body.contains(rf, cf) {
                *p = spec.body_hu;
            }
            if lungs.iter().any(|l| l.contains(rf, cf)) {
                *p = spec.lung_hu;
            }
        }
    }
    for (t, modes) in spec.tumors.iter().zip(&textures) {
        let radius = spec.section_radius(t);
        if radius <= 0.0 {
            continue;
        }
        let amp = t.texture_amplitude_hu * math::sqrt(2.0 / modes.len() as f64);
        for r in 0..h {
            for c in 0..w {
                let dr = r as f64 - t.center.0;
                let dc = c as f64 - t.center.1;
                if dr * dr + dc * dc > radius * radius {
                    continue;
                }
                let (ry, cx) = (dr * spec.spacing_mm, dc * spec.spacing_mm);
                let zz = z - t.center_z_mm;
                let tex: f64 = modes
                    .iter()
                    .map(|m| math::cos(2.0 * PI * (m.k.0 * ry + m.k.1 * cx + m.k.2 * zz) + m.phase))
                    .sum();
                pixels[r * w + c] = t.base_hu + amp * tex;
            }
        }
    }
    if spec.noise_hu > 0.0 {
        let mut noise_rng = rng::stream(seed, z.to_bits());
        for p in pixels.iter_mut() {
            let n: f64 = rng::standard_normal(&mut noise_rng);
            *p += spec.noise_hu * n;
        }
    }
    let pixels = pixels.into_iter().map(clamp_hu).collect();
    ImageSlice::new(h, w, pixels)?.with_spacing(spec.spacing_mm, spec.spacing_mm)
}

/// A simulated reconstruction kernel.
///
/// `mtf` samples the radial frequency response uniformly on `[0, Nyquist]`;
/// frequencies beyond Nyquist (the corners of the spectrum) use the last
/// sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelProfile {
    pub name: String,
    pub mtf: Vec<f64>,
    pub noise_gain: f64,
}

impl KernelProfile {
    /// The kernel that returns its input unchanged.
    pub fn identity() -> Self {
        Self {
            name: "identity".into(),
            mtf: alloc::vec![1.0; 2],
            noise_gain: 0.0,
        }
    }

    /// `mtf(u) = exp(-(u / width)^2)` with `u` the frequency relative to
    /// Nyquist.
    pub fn gaussian(name: &str, width: f64, noise_gain: f64, samples: usize) -> Self {
        let n = samples.max(2);
        let mtf = (0..n)
            .map(|i| {
                let u = i as f64 / (n - 1) as f64;
                math::exp(-(u / width) * (u / width))
            })
            .collect();
        Self {
            name: name.into(),
            mtf,
            noise_gain,
        }
    }

    /// Smooth, noise-suppressing kernel producing the non-standard image.
    pub fn smooth_default() -> Self {
        Self::gaussian("smooth", 0.25, 8.0, 65)
    }

    /// Sharp, edge-preserving kernel producing the standard image.
    pub fn sharp_default() -> Self {
        Self::gaussian("sharp", 1.6, 8.0, 65)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mtf.len() < 2 {
            return Err(Error::validation(format!(
                "kernel {}: mtf needs at least 2 samples",
                self.name
            )));
        }
        if self.mtf[0] != 1.0 {
            return Err(Error::validation(format!(
                "kernel {}: mtf(0) must be 1, got {}",
                self.name, self.mtf[0]
            )));
        }
        if let Some(v) = self.mtf.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::validation(format!(
                "kernel {}: mtf value {v} is negative or non-finite",
                self.name
            )));
        }
        if let Some(i) = self.mtf.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::validation(format!(
                "kernel {}: mtf is not monotone non-increasing at sample {}",
                self.name,
                i + 1
            )));
        }
        if !(self.noise_gain >= 0.0) {
            return Err(Error::validation(format!(
                "kernel {}: noise gain must be non-negative",
                self.name
            )));
        }
        Ok(())
    }

    fn is_identity(&self) -> bool {
        self.noise_gain == 0.0 && self.mtf.iter().all(|v| *v == 1.0)
    }

    /// Response at `u`, the radial frequency as a fraction of Nyquist.
    pub fn response(&self, u: f64) -> f64 {
        let last = self.mtf.len() - 1;
        let x = (u * last as f64).max(0.0);
        if x >= last as f64 {
            return self.mtf[last];
        }
        let i = math::floor(x) as usize;
        let frac = x - i as f64;
        self.mtf[i] * (1.0 - frac) + self.mtf[i + 1] * frac
    }
}

/// Radial frequency of a spectrum bin as a fraction of Nyquist.
#[inline]
fn radial_u(fr: f64, fc: f64) -> f64 {
    // Nyquist is 0.5 cycles per sample.
    2.0 * math::sqrt(fr * fr + fc * fc)
}

/// Simulates reconstructing `truth` with `kernel`.
pub fn apply_kernel(truth: &ImageSlice, kernel: &KernelProfile, seed: u64) -> Result<ImageSlice> {
    kernel.validate()?;
    if truth.pixels().iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("input image has non-finite pixels"));
    }
    if kernel.is_identity() {
        return Ok(truth.clone());
    }
    let (h, w) = truth.dims();
    let response = |fr: f64, fc: f64| kernel.response(radial_u(fr, fc));
    let mut out = fft::filter_real(truth.pixels(), h, w, response);
    if kernel.noise_gain > 0.0 {
        let mut rng = rng::stream(seed, 0);
        let white: Vec<f64> = (0..h * w).map(|_| rng::standard_normal(&mut rng)).collect();
        let shaped = fft::filter_real(&white, h, w, response);
        for (o, n) in out.iter_mut().zip(&shaped) {
            *o += kernel.noise_gain * n;
        }
    }
    let (sr, sc) = truth.spacing_mm();
    ImageSlice::from_clamped(h, w, out)?.with_spacing(sr, sc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One slice reconstructed with both kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImagePair {
    pub slice_id: String,
    pub image_a: ImageSlice,
    pub image_b: ImageSlice,
    pub rois: Vec<TumorRoi>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pub split: Split,
    pub pairs: Vec<ImagePair>,
}

impl PairedDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Every `A` and `B` image as independent samples.
    pub fn all_images(&self) -> impl Iterator<Item = &ImageSlice> {
        self.pairs.iter().flat_map(|p| [&p.image_a, &p.image_b])
    }
}

/// How the slices of one split are laid out along the axial direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub split: Split,
    pub n_slices: usize,
    /// Axial range swept by the split, in mm.
    pub z_range_mm: (f64, f64),
    /// Fraction of one slice step by which positions are offset from the
    /// start of the range. Train and test use different offsets so their
    /// positions interleave without coinciding.
    pub z_offset: f64,
    /// Multiplier on both kernels' noise gain.
    pub noise_scale: f64,
    /// Multiplier on tumor texture amplitudes.
    pub texture_scale: f64,
}

impl SplitPlan {
    pub fn train(n_slices: usize) -> Self {
        Self {
            split: Split::Train,
            n_slices,
            z_range_mm: (-3.0, 3.0),
            z_offset: 0.25,
            noise_scale: 1.0,
            texture_scale: 1.0,
        }
    }

    /// The held-out split: interleaved positions with a noise-level shift
    /// standing in for the thinner-slice acquisition of the test scans.
    pub fn test(n_slices: usize) -> Self {
        Self {
            split: Split::Test,
            n_slices,
            z_range_mm: (-3.0, 3.0),
            z_offset: 0.75,
            noise_scale: 1.25,
            texture_scale: 1.0,
        }
    }

    fn z_at(&self, i: usize) -> f64 {
        let (lo, hi) = self.z_range_mm;
        lo + (i as f64 + self.z_offset) * (hi - lo) / self.n_slices as f64
    }
}

/// Generates one split of paired slices.
pub fn make_split(
    spec: &PhantomSpec,
    kernel_a: &KernelProfile,
    kernel_b: &KernelProfile,
    plan: &SplitPlan,
    seed: u64,
) -> Result<PairedDataset> {
    if plan.n_slices < 1 {
        return Err(Error::validation("n_slices must be at least 1"));
    }
    spec.validate()?;
    kernel_a.validate()?;
    kernel_b.validate()?;
    let scale_noise = |k: &KernelProfile| KernelProfile {
        noise_gain: k.noise_gain * plan.noise_scale,
        ..k.clone()
    };
    let (ka, kb) = (scale_noise(kernel_a), scale_noise(kernel_b));
    let mut sliced = spec.clone();
    for t in sliced.tumors.iter_mut() {
        t.texture_amplitude_hu *= plan.texture_scale;
    }
    let split_tag = plan.split as u64 + 1;
    let pairs = (0..plan.n_slices)
        .map(|i| {
            sliced.slice_z_mm = plan.z_at(i);
            let truth = generate_ground_truth(&sliced, seed)?;
            let slice_tag = rng::mix(split_tag, i as u64);
            let image_a = apply_kernel(&truth, &ka, rng::mix(seed ^ tags::KERNEL_A, slice_tag))?;
            let image_b = apply_kernel(&truth, &kb, rng::mix(seed ^ tags::KERNEL_B, slice_tag))?;
            Ok(ImagePair {
                slice_id: format!("{}-{i:04}", plan.split.as_str()),
                image_a,
                image_b,
                rois: sliced.tumor_rois(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PairedDataset {
        split: plan.split,
        pairs,
    })
}

/// Generates a training split of `n_slices` pairs.
pub fn make_paired_dataset(
    spec: &PhantomSpec,
    kernel_a: &KernelProfile,
    kernel_b: &KernelProfile,
    n_slices: usize,
    seed: u64,
) -> Result<PairedDataset> {
    make_split(spec, kernel_a, kernel_b, &SplitPlan::train(n_slices), seed)
}
