//! Image slices and ROI masks.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Lower end of the 12-bit CT range, in HU.
pub const HU_MIN: f64 = -1024.0;
/// Upper end of the 12-bit CT range, in HU.
pub const HU_MAX: f64 = 3071.0;

/// Clamp a value into `[HU_MIN, HU_MAX]`.
#[inline]
pub fn clamp_hu(v: f64) -> f64 {
    v.clamp(HU_MIN, HU_MAX)
}

/// A 2-D grid of Hounsfield-unit intensities, stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSlice {
    height: usize,
    width: usize,
    spacing_mm: (f64, f64),
    pixels: Vec<f64>,
}

impl ImageSlice {
    /// Builds a slice, rejecting non-finite or out-of-range pixels.
    pub fn new(height: usize, width: usize, pixels: Vec<f64>) -> Result<Self> {
        Self::check_dims(height, width, pixels.len())?;
        if let Some((i, v)) = pixels
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < HU_MIN || **v > HU_MAX)
        {
            return Err(Error::validation(format!(
                "pixel {i} = {v} outside [{HU_MIN}, {HU_MAX}] HU"
            )));
        }
        Ok(Self {
            height,
            width,
            spacing_mm: (1.0, 1.0),
            pixels,
        })
    }

    /// Builds a slice, clamping every pixel into the HU range. Non-finite
    /// pixels are rejected.
    pub fn from_clamped(height: usize, width: usize, mut pixels: Vec<f64>) -> Result<Self> {
        Self::check_dims(height, width, pixels.len())?;
        for (i, v) in pixels.iter_mut().enumerate() {
            if !v.is_finite() {
                return Err(Error::Numeric {
                    step: i,
                    what: format!("non-finite pixel {v}"),
                });
            }
            *v = clamp_hu(*v);
        }
        Ok(Self {
            height,
            width,
            spacing_mm: (1.0, 1.0),
            pixels,
        })
    }

    /// A constant slice.
    pub fn filled(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    fn check_dims(height: usize, width: usize, len: usize) -> Result<()> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if height * width != len {
            return Err(Error::shape(
                format!("{} pixels ({height}x{width})", height * width),
                format!("{len} pixels"),
            ));
        }
        Ok(())
    }

    pub fn with_spacing(mut self, row_mm: f64, col_mm: f64) -> Result<Self> {
        if !(row_mm > 0.0 && col_mm > 0.0) {
            return Err(Error::validation("pixel spacing must be positive"));
        }
        self.spacing_mm = (row_mm, col_mm);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn spacing_mm(&self) -> (f64, f64) {
        self.spacing_mm
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }
}

/// A boolean ROI mask congruent with an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if height * width != bits.len() || height == 0 || width == 0 {
            return Err(Error::shape(
                format!("{height}x{width} mask"),
                format!("{} entries", bits.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    /// A mask covering every pixel.
    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            bits,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    /// Like [`Mask::contains`] but false outside the grid.
    #[inline]
    pub fn contains_signed(&self, row: isize, col: isize) -> bool {
        row >= 0
            && col >= 0
            && (row as usize) < self.height
            && (col as usize) < self.width
            && self.bits[row as usize * self.width + col as usize]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    /// Whether the set pixels form one 4-connected component.
    pub fn is_connected(&self) -> bool {
        let Some(start) = self.bits.iter().position(|b| *b) else {
            return false;
        };
        let mut seen = vec![false; self.bits.len()];
        let mut stack = vec![start];
        seen[start] = true;
        let mut reached = 0;
        while let Some(i) = stack.pop() {
            reached += 1;
            let (r, c) = ((i / self.width) as isize, (i % self.width) as isize);
            for (dr, dc) in [(-1, 0), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r + dr, c + dc);
                if self.contains_signed(nr, nc) {
                    let j = nr as usize * self.width + nc as usize;
                    if !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        reached == self.count()
    }
}

/// A label map where 0 is background and `k > 0` marks ROI `k`.
///
/// This is the in-memory form of the `roi.msk` payload.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMask {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if height * width != labels.len() || height == 0 || width == 0 {
            return Err(Error::shape(
                format!("{height}x{width} label mask"),
                format!("{} entries", labels.len()),
            ));
        }
        Ok(Self {
            height,
            width,
            labels,
        })
    }

    /// Labels present in the map, ascending, without the background.
    pub fn present_labels(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..=255u8).filter(|l| seen[*l as usize]).collect()
    }

    /// The boolean mask of one label.
    pub fn mask_of(&self, label: u8) -> Mask {
        Mask {
            height: self.height,
            width: self.width,
            bits: self.labels.iter().map(|l| *l == label).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(ImageSlice::new(1, 2, vec![0.0, 5000.0]).is_err());
        assert!(ImageSlice::new(1, 2, vec![0.0, f64::NAN]).is_err());
        assert!(ImageSlice::new(2, 2, vec![0.0; 3]).is_err());
        let s = ImageSlice::from_clamped(1, 2, vec![-3000.0, 5000.0]).unwrap();
        assert_eq!(s.pixels(), &[HU_MIN, HU_MAX]);
    }

    #[test]
    fn connectivity() {
        let m = Mask::from_fn(3, 3, |r, c| r == c);
        assert!(!m.is_connected());
        let m = Mask::from_fn(3, 3, |r, _| r == 1);
        assert!(m.is_connected());
        assert!(!Mask::from_fn(2, 2, |_, _| false).is_connected());
    }

    #[test]
    fn label_masks() {
        let lm = LabelMask::new(2, 2, vec![0, 2, 2, 1]).unwrap();
        assert_eq!(lm.present_labels(), vec![1, 2]);
        assert_eq!(lm.mask_of(2).count(), 2);
    }
}
