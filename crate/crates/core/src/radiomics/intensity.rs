use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;

use super::{check_mask, QuantizationSpec};
use crate::image::{ImageSlice, Mask};
use crate::{Error, Result};

pub(super) const ID_NAMES: [&str; 9] = [
    "mean", "median", "std", "min", "max", "range", "skewness", "kurtosis", "energy",
];
pub(super) const IH_NAMES: [&str; 5] = ["entropy", "uniformity", "p10", "p50", "p90"];

fn roi_values(image: &ImageSlice, mask: &Mask) -> Result<Vec<f64>> {
    check_mask(image, mask)?;
    Ok(image
        .pixels()
        .iter()
        .zip(mask.bits())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .collect())
}

fn entropy_bits(probs: impl Iterator<Item = f64>) -> f64 {
    let h: f64 = probs.filter(|&p| p > 0.0).map(|p| -p * math::log2(p)).sum();
    // Avoid returning -0.0 for single-bin histograms.
    h + 0.0
}

/// First-order statistics of the in-mask HU values, in `ID_NAMES` order.
pub fn intensity_direct_features(image: &ImageSlice, mask: &Mask) -> Result<Vec<f64>> {
    let mut v = roi_values(image, mask)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in &v {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let std = math::sqrt(m2);
    let (skew, kurt) = if m2 > 0.0 {
        (m3 / (m2 * std), m4 / (m2 * m2) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let energy = v.iter().map(|x| x * x).sum::<f64>();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    let median = if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    };
    let (min, max) = (v[0], v[k - 1]);
    Ok(vec![mean, median, std, min, max, max - min, skew, kurt, energy])
}

/// Nearest-rank percentile of sorted values.
fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let rank = math::ceil(p / 100.0 * sorted.len() as f64).max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

/// Histogram entropy, uniformity and nearest-rank p10/p50/p90.
///
/// The histogram has `n_bins` equal bins over the quantization window;
/// values outside the window fall in the end bins. Percentiles use raw HU.
pub fn intensity_histogram_features(
    image: &ImageSlice,
    mask: &Mask,
    n_bins: usize,
    window: &QuantizationSpec,
) -> Result<Vec<f64>> {
    if n_bins < 2 {
        return Err(Error::validation("intensity histogram needs at least 2 bins"));
    }
    let mut v = roi_values(image, mask)?;
    let binning = QuantizationSpec {
        n_levels: n_bins,
        ..*window
    };
    binning.validate()?;
    let mut counts = vec![0usize; n_bins];
    for &x in &v {
        counts[binning.level(x) as usize - 1] += 1;
    }
    let n = v.len() as f64;
    let probs = counts.iter().map(|&c| c as f64 / n);
    let entropy = entropy_bits(probs.clone());
    let uniformity = probs.map(|p| p * p).sum::<f64>();
    v.sort_by(f64::total_cmp);
    Ok(vec![
        entropy,
        uniformity,
        nearest_rank(&v, 10.0),
        nearest_rank(&v, 50.0),
        nearest_rank(&v, 90.0),
    ])
}

/// Magnitude-weighted histogram of gradient orientation over `[0, 2π)`.
///
/// Gradients are central differences, taken only where the pixel and its
/// four neighbours all lie in the mask. `gx` runs along columns and `gy`
/// along rows.
pub fn goh_histogram(image: &ImageSlice, mask: &Mask, n_bins: usize) -> Result<Vec<f64>> {
    check_mask(image, mask)?;
    if n_bins < 2 {
        return Err(Error::validation("orientation histogram needs at least 2 bins"));
    }
    let (h, w) = image.dims();
    let mut hist = vec![0.0; n_bins];
    let mut interior = 0usize;
    for r in 1..h.saturating_sub(1) {
        for c in 1..w.saturating_sub(1) {
            if !(mask.contains(r, c)
                && mask.contains(r - 1, c)
                && mask.contains(r + 1, c)
                && mask.contains(r, c - 1)
                && mask.contains(r, c + 1))
            {
                continue;
            }
            interior += 1;
            let gx = 0.5 * (image.get(r, c + 1) - image.get(r, c - 1));
            let gy = 0.5 * (image.get(r + 1, c) - image.get(r - 1, c));
            let mag = math::hypot(gx, gy);
            if mag == 0.0 {
                continue;
            }
            let mut theta = math::atan2(gy, gx);
            if theta < 0.0 {
                theta += 2.0 * PI;
            }
            let bin = ((theta / (2.0 * PI) * n_bins as f64) as usize).min(n_bins - 1);
            hist[bin] += mag;
        }
    }
    if interior == 0 {
        return Err(Error::validation("mask has no pixels with all four neighbours inside"));
    }
    Ok(hist)
}

/// Orientation-bin weight fractions followed by the orientation entropy.
/// A region without any gradient has all-zero fractions and entropy 0.
pub fn goh_features(image: &ImageSlice, mask: &Mask, n_bins: usize) -> Result<Vec<f64>> {
    let hist = goh_histogram(image, mask, n_bins)?;
    let total: f64 = hist.iter().sum();
    let mut out: Vec<f64> = if total > 0.0 {
        hist.iter().map(|w| w / total).collect()
    } else {
        vec![0.0; n_bins]
    };
    let entropy = entropy_bits(out.iter().copied());
    out.push(entropy);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pixels() {
        let img = ImageSlice::new(1, 2, vec![0.0, 2.0]).unwrap();
        let f = intensity_direct_features(&img, &Mask::full(1, 2)).unwrap();
        assert_eq!(&f[..6], &[1.0, 1.0, 1.0, 0.0, 2.0, 2.0]);
        assert_eq!(f[8], 4.0);
    }

    #[test]
    fn constant_region() {
        let img = ImageSlice::filled(4, 4, 37.0).unwrap();
        let m = Mask::full(4, 4);
        let f = intensity_direct_features(&img, &m).unwrap();
        assert_eq!((f[0], f[2], f[5], f[6], f[7]), (37.0, 0.0, 0.0, 0.0, 0.0));
        let ih = intensity_histogram_features(&img, &m, 32, &QuantizationSpec::default()).unwrap();
        assert_eq!((ih[0], ih[1]), (0.0, 1.0));
        let goh = goh_features(&img, &m, 8).unwrap();
        assert!(goh.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn horizontal_ramp_in_first_bin() {
        let px: Vec<f64> = (0..25).map(|i| (i % 5) as f64 * 10.0).collect();
        let img = ImageSlice::new(5, 5, px).unwrap();
        let goh = goh_features(&img, &Mask::full(5, 5), 8).unwrap();
        assert_eq!(goh[0], 1.0);
        assert!(goh[1..8].iter().all(|&v| v == 0.0));
        assert_eq!(goh[8], 0.0);
    }

    #[test]
    fn uniform_bins_entropy() {
        let q = QuantizationSpec {
            n_levels: 4,
            low: 0.0,
            high: 4.0,
        };
        let img = ImageSlice::new(1, 4, vec![0.5, 1.5, 2.5, 3.5]).unwrap();
        let ih = intensity_histogram_features(&img, &Mask::full(1, 4), 4, &q).unwrap();
        assert!((ih[0] - 2.0).abs() < 1e-15);
        assert_eq!(ih[1], 0.25);
        assert_eq!((ih[2], ih[3], ih[4]), (0.5, 1.5, 3.5));
    }
}
