use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;

use super::Quantized;
use crate::{Error, Result};

pub(super) const GLCM_NAMES: [&str; 6] = [
    "energy",
    "contrast",
    "correlation",
    "homogeneity",
    "entropy",
    "dissimilarity",
];
pub(super) const GLRLM_NAMES: [&str; 5] = ["sre", "lre", "gln", "rln", "rp"];
pub(super) const NID_NAMES: [&str; 5] = ["coarseness", "contrast", "busyness", "complexity", "strength"];

/// Coarseness reported when the region has no gray-tone differences at all.
pub const COARSENESS_CAP: f64 = 1e6;

/// Symmetric co-occurrence matrix for one offset, normalized to sum 1.
/// Row-major `n_levels x n_levels`; index `i` stands for level `i + 1`.
pub fn glcm_matrix(q: &Quantized, offset: (i32, i32)) -> Result<Vec<f64>> {
    let n = q.n_levels;
    let mut p = vec![0.0; n * n];
    let mut pairs = 0usize;
    let (dr, dc) = (offset.0 as isize, offset.1 as isize);
    for r in 0..q.height as isize {
        for c in 0..q.width as isize {
            let a = q.at(r, c);
            let b = q.at(r + dr, c + dc);
            if a == 0 || b == 0 {
                continue;
            }
            let (i, j) = (a as usize - 1, b as usize - 1);
            p[i * n + j] += 1.0;
            p[j * n + i] += 1.0;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyMatrix(format!(
            "no in-mask pixel pairs for GLCM offset {offset:?}"
        )));
    }
    let total = 2.0 * pairs as f64;
    p.iter_mut().for_each(|v| *v /= total);
    Ok(p)
}

/// Mean of the per-offset normalized matrices.
pub fn glcm_matrix_averaged(q: &Quantized, offsets: &[(i32, i32)]) -> Result<Vec<f64>> {
    if offsets.is_empty() {
        return Err(Error::validation("GLCM needs at least one offset"));
    }
    let n = q.n_levels;
    let mut acc = vec![0.0; n * n];
    for &o in offsets {
        for (a, v) in acc.iter_mut().zip(glcm_matrix(q, o)?) {
            *a += v;
        }
    }
    let k = offsets.len() as f64;
    acc.iter_mut().for_each(|v| *v /= k);
    Ok(acc)
}

/// GLCM features in `GLCM_NAMES` order. Correlation is 1 for a matrix
/// with zero marginal variance.
pub fn glcm_features(q: &Quantized, offsets: &[(i32, i32)]) -> Result<Vec<f64>> {
    let p = glcm_matrix_averaged(q, offsets)?;
    let n = q.n_levels;
    let mut mu = 0.0;
    for i in 0..n {
        for j in 0..n {
            mu += (i + 1) as f64 * p[i * n + j];
        }
    }
    let (mut energy, mut contrast, mut homog, mut entropy, mut dissim) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut var, mut cov) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let v = p[i * n + j];
            if v == 0.0 {
                continue;
            }
            let d = i as f64 - j as f64;
            let (di, dj) = ((i + 1) as f64 - mu, (j + 1) as f64 - mu);
            energy += v * v;
            contrast += d * d * v;
            homog += v / (1.0 + d * d);
            entropy -= v * math::log2(v);
            dissim += d.abs() * v;
            var += di * di * v;
            cov += di * dj * v;
        }
    }
    let corr = if var > 0.0 { cov / var } else { 1.0 };
    Ok(vec![energy, contrast, corr, homog, entropy + 0.0, dissim])
}

/// Run counts indexed by `[level - 1][length - 1]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunLengthMatrix {
    pub n_levels: usize,
    pub max_length: usize,
    pub counts: Vec<u64>,
}

impl RunLengthMatrix {
    pub fn get(&self, level: usize, length: usize) -> u64 {
        self.counts[(level - 1) * self.max_length + (length - 1)]
    }

    pub fn total_runs(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Runs of equal level along `direction`, restricted to the mask.
pub fn glrlm_matrix(q: &Quantized, direction: (i32, i32)) -> Result<RunLengthMatrix> {
    if direction == (0, 0) {
        return Err(Error::validation("run direction must be non-zero"));
    }
    if q.count() == 0 {
        return Err(Error::validation("region of interest is empty"));
    }
    let max_length = q.height.max(q.width);
    let n = q.n_levels;
    let mut counts = vec![0u64; n * max_length];
    let (dr, dc) = (direction.0 as isize, direction.1 as isize);
    for r in 0..q.height as isize {
        for c in 0..q.width as isize {
            let level = q.at(r, c);
            if level == 0 || q.at(r - dr, c - dc) == level {
                continue;
            }
            let mut len = 1;
            while q.at(r + dr * len as isize, c + dc * len as isize) == level {
                len += 1;
            }
            counts[(level as usize - 1) * max_length + (len - 1)] += 1;
        }
    }
    Ok(RunLengthMatrix {
        n_levels: n,
        max_length,
        counts,
    })
}

fn run_features(m: &RunLengthMatrix, pixels: usize) -> [f64; 5] {
    let nr = m.total_runs() as f64;
    let (mut sre, mut lre) = (0.0, 0.0);
    let mut by_level = vec![0.0; m.n_levels];
    let mut by_length = vec![0.0; m.max_length];
    for i in 0..m.n_levels {
        for j in 0..m.max_length {
            let v = m.counts[i * m.max_length + j] as f64;
            if v == 0.0 {
                continue;
            }
            let len = (j + 1) as f64;
            sre += v / (len * len);
            lre += v * len * len;
            by_level[i] += v;
            by_length[j] += v;
        }
    }
    let gln = by_level.iter().map(|v| v * v).sum::<f64>();
    let rln = by_length.iter().map(|v| v * v).sum::<f64>();
    [sre / nr, lre / nr, gln / nr, rln / nr, nr / pixels as f64]
}

/// GLRLM features in `GLRLM_NAMES` order, computed per direction and then
/// averaged over directions.
pub fn glrlm_features(q: &Quantized, directions: &[(i32, i32)]) -> Result<Vec<f64>> {
    if directions.is_empty() {
        return Err(Error::validation("GLRLM needs at least one direction"));
    }
    let pixels = q.count();
    let mut acc = [0.0; 5];
    for &d in directions {
        let f = run_features(&glrlm_matrix(q, d)?, pixels);
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let k = directions.len() as f64;
    Ok(acc.iter().map(|v| v / k).collect())
}

/// Neighbourhood gray-tone difference table, indexed by `level - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NgtdmTable {
    /// Pixels of each level that have at least one in-mask neighbour.
    pub counts: Vec<usize>,
    /// Sum of `|level - mean neighbour level|` over those pixels.
    pub diffs: Vec<f64>,
}

/// Builds the table over a Chebyshev neighbourhood of `radius`.
pub fn ngtdm_table(q: &Quantized, radius: usize) -> Result<NgtdmTable> {
    if radius < 1 {
        return Err(Error::validation("neighbourhood radius must be at least 1"));
    }
    let n = q.n_levels;
    let mut counts = vec![0usize; n];
    let mut diffs = vec![0.0; n];
    let rad = radius as isize;
    for r in 0..q.height as isize {
        for c in 0..q.width as isize {
            let level = q.at(r, c);
            if level == 0 {
                continue;
            }
            let (mut sum, mut k) = (0.0, 0usize);
            for dr in -rad..=rad {
                for dc in -rad..=rad {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let v = q.at(r + dr, c + dc);
                    if v > 0 {
                        sum += v as f64;
                        k += 1;
                    }
                }
            }
            if k == 0 {
                continue;
            }
            let i = level as usize - 1;
            counts[i] += 1;
            diffs[i] += (level as f64 - sum / k as f64).abs();
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::validation("no in-mask pixel has an in-mask neighbour"));
    }
    Ok(NgtdmTable { counts, diffs })
}

/// NGTDM features in `NID_NAMES` order.
pub fn nid_features(q: &Quantized, radius: usize) -> Result<Vec<f64>> {
    let t = ngtdm_table(q, radius)?;
    let nv: usize = t.counts.iter().sum();
    let nv = nv as f64;
    let present: Vec<(f64, f64, f64)> = t
        .counts
        .iter()
        .zip(&t.diffs)
        .enumerate()
        .filter(|(_, (&c, _))| c > 0)
        .map(|(i, (&c, &s))| ((i + 1) as f64, c as f64 / nv, s))
        .collect();
    let ng = present.len() as f64;
    let s_total: f64 = present.iter().map(|x| x.2).sum();
    let ps: f64 = present.iter().map(|&(_, p, s)| p * s).sum();

    let coarseness = if ps > 0.0 { 1.0 / ps } else { COARSENESS_CAP };
    let (mut pair_contrast, mut busy_den, mut complexity, mut strength_num) = (0.0, 0.0, 0.0, 0.0);
    for &(i, pi, si) in &present {
        for &(j, pj, sj) in &present {
            let d = i - j;
            pair_contrast += pi * pj * d * d;
            busy_den += (i * pi - j * pj).abs();
            complexity += d.abs() * (pi * si + pj * sj) / (pi + pj);
            strength_num += (pi + pj) * d * d;
        }
    }
    let contrast = if ng > 1.0 {
        pair_contrast / (ng * (ng - 1.0)) * s_total / nv
    } else {
        0.0
    };
    let busyness = if busy_den > 0.0 { ps / busy_den } else { 0.0 };
    let strength = if s_total > 0.0 { strength_num / s_total } else { 0.0 };
    Ok(vec![coarseness, contrast, busyness, complexity / nv, strength])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomics::FOUR_DIRECTIONS;

    fn grid(h: usize, w: usize, n: usize, levels: &[u16]) -> Quantized {
        Quantized::from_levels(h, w, n, levels.to_vec()).unwrap()
    }

    #[test]
    fn constant_glcm() {
        let q = grid(3, 3, 4, &[2; 9]);
        let f = glcm_features(&q, &FOUR_DIRECTIONS).unwrap();
        assert_eq!((f[0], f[1], f[4]), (1.0, 0.0, 0.0));
        assert_eq!(f[2], 1.0);
    }

    #[test]
    fn stripes_contrast() {
        // Columns alternate 1, 2: every horizontal pair differs by one level.
        let q = grid(4, 4, 2, &[1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1, 2]);
        let f = glcm_features(&q, &[(0, 1)]).unwrap();
        assert_eq!(f[1], 1.0);
        let f = glcm_features(&q, &[(1, 0)]).unwrap();
        assert_eq!(f[1], 0.0);
    }

    #[test]
    fn glcm_needs_pairs() {
        let q = grid(1, 1, 2, &[1]);
        assert!(matches!(glcm_features(&q, &[(0, 1)]), Err(Error::EmptyMatrix(_))));
    }

    #[test]
    fn single_run_row() {
        let q = grid(1, 5, 3, &[2; 5]);
        let m = glrlm_matrix(&q, (0, 1)).unwrap();
        assert_eq!(m.total_runs(), 1);
        assert_eq!(m.get(2, 5), 1);
        let f = glrlm_features(&q, &[(0, 1)]).unwrap();
        assert_eq!(f[4], 0.2);
    }

    #[test]
    fn alternating_row() {
        let q = grid(1, 6, 2, &[1, 2, 1, 2, 1, 2]);
        let f = glrlm_features(&q, &[(0, 1)]).unwrap();
        assert_eq!(f[0], 1.0);
        assert_eq!(f[4], 1.0);
    }

    #[test]
    fn ngtdm_two_by_two() {
        // Each level-1 pixel sees neighbours {1, 2, 2}; mean 5/3, diff 2/3.
        // Each level-2 pixel sees {2, 1, 1}; mean 4/3, diff 2/3.
        let q = grid(2, 2, 2, &[1, 2, 1, 2]);
        let t = ngtdm_table(&q, 1).unwrap();
        assert_eq!(t.counts, vec![2, 2]);
        assert!((t.diffs[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((t.diffs[1] - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn ngtdm_constant_and_isolated() {
        let q = grid(3, 3, 4, &[3; 9]);
        let f = nid_features(&q, 1).unwrap();
        assert_eq!(f[0], COARSENESS_CAP);
        assert_eq!(f[1], 0.0);
        let q = grid(3, 3, 4, &[1, 0, 1, 0, 0, 0, 1, 0, 1]);
        assert!(nid_features(&q, 1).is_err());
    }
}
