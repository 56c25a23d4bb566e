//! Independent reference implementations and the checks built on them.
//!
//! Everything here is written from the definitions, deliberately along a
//! different route than the library (pair scans instead of offset loops,
//! line walks instead of run-start tests, Pearson form for concordance).
//! The acceptance target includes this file too.

#![allow(dead_code)]

use std::f64::consts::PI;

use ctharm_core::codec::{init_codec, CodecConfig, LatentVector};
use ctharm_core::diffusion::{
    build_schedule, diffusion_loss, diffusion_loss_grad, q_sample, reverse_mean, sample_trajectory,
    DenoiserConfig, DenoiserModel, NoisePredictor, NoiseSchedule,
};
use ctharm_core::metrics::{ccc, re_curve_from_errors, relative_error, ReproducibleCount, REPRODUCIBLE_RE};
use ctharm_core::radiomics::{
    extract_all, glcm_features, glcm_matrix, glcm_matrix_averaged, glrlm_features, glrlm_matrix,
    nid_features, ngtdm_table, quantize, Quantized, RadiomicsConfig, COARSENESS_CAP, FOUR_DIRECTIONS,
};
use ctharm_core::image::Mask;
use ctharm_core::{ImageSlice, Result};

/// splitmix64; keeps the fixtures free of the library's own RNG.
pub struct Rng(u64);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e37_79b9_7f4a_7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
    }
}

/// `|a - b|` scaled by `max(1, |b|)`.
pub fn scaled_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}

// ---------------------------------------------------------------- metrics

pub fn re_oracle(f_s: f64, f_t: f64) -> Option<f64> {
    if f_t == 0.0 {
        if f_s == 0.0 {
            Some(0.0)
        } else {
            None
        }
    } else {
        Some(((f_s - f_t) / f_t).abs())
    }
}

/// Concordance in the `2 rho sd_s sd_t / (var_s + var_t + dmean^2)` form.
pub fn ccc_oracle(s: &[f64], t: &[f64]) -> Option<f64> {
    let n = s.len() as f64;
    let ms = s.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let vs = s.iter().map(|x| (x - ms).powi(2)).sum::<f64>() / n;
    let vt = t.iter().map(|x| (x - mt).powi(2)).sum::<f64>() / n;
    if vs == 0.0 && vt == 0.0 {
        return None;
    }
    if vs == 0.0 || vt == 0.0 {
        return Some(0.0);
    }
    let (sd_s, sd_t) = (vs.sqrt(), vt.sqrt());
    let rho = s
        .iter()
        .zip(t)
        .map(|(a, b)| ((a - ms) / sd_s) * ((b - mt) / sd_t))
        .sum::<f64>()
        / n;
    Some(2.0 * rho * sd_s * sd_t / (vs + vt + (ms - mt).powi(2)))
}

#[derive(Debug, Default)]
pub struct MetricsCheck {
    pub fixtures: usize,
    pub max_re_err: f64,
    pub max_ccc_err: f64,
    pub count_mismatches: usize,
    pub boundary_failures: Vec<String>,
}

impl MetricsCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_re_err <= tol && self.max_ccc_err <= tol && self.count_mismatches == 0 && self.boundary_failures.is_empty()
    }
}

fn random_feature(rng: &mut Rng) -> f64 {
    let scale = 10f64.powf(rng.range(-3.0, 4.0));
    let v = rng.range(-1.0, 1.0) * scale;
    if rng.below(20) == 0 {
        0.0
    } else {
        v
    }
}

/// RE, reproducible counts and CCC on `n` random fixtures plus the
/// boundary cases.
pub fn check_metrics(n: usize, seed: u64) -> MetricsCheck {
    let mut rng = Rng::new(seed);
    let mut out = MetricsCheck {
        fixtures: n,
        ..Default::default()
    };
    for _ in 0..n {
        let len = 2 + rng.below(40);
        let t: Vec<f64> = (0..len).map(|_| random_feature(&mut rng)).collect();
        let s: Vec<f64> = t
            .iter()
            .map(|&v| match rng.below(10) {
                0 => 0.0,
                1 => random_feature(&mut rng),
                _ => v * (1.0 + rng.range(-0.5, 0.5)),
            })
            .collect();

        let mut errors = Vec::with_capacity(len);
        for (&a, &b) in s.iter().zip(&t) {
            let got = relative_error(a, b).expect("finite inputs");
            let want = re_oracle(a, b);
            match (got, want) {
                (Some(g), Some(w)) => out.max_re_err = out.max_re_err.max(scaled_diff(g, w)),
                (None, None) => {}
                _ => out.count_mismatches += 1,
            }
            errors.push(want);
        }
        let th = rng.range(0.0, 0.6);
        let rc = ReproducibleCount::from_errors(&errors, th);
        let want_count = errors.iter().flatten().filter(|&&e| e < th).count();
        let want_total = errors.iter().flatten().count();
        if rc.count != want_count || rc.total != want_total || rc.undefined != len - want_total {
            out.count_mismatches += 1;
        }
        let curve = re_curve_from_errors(&errors, &[0.0, th, 1.0]).unwrap();
        let want_curve: Vec<usize> = [0.0, th, 1.0]
            .iter()
            .map(|&x| errors.iter().flatten().filter(|&&e| e < x).count())
            .collect();
        if curve.iter().map(|c| c.1).collect::<Vec<_>>() != want_curve {
            out.count_mismatches += 1;
        }

        let r = ccc(&s, &t).unwrap();
        match (r.ccc, ccc_oracle(&s, &t)) {
            (Some(g), Some(w)) => out.max_ccc_err = out.max_ccc_err.max((g - w).abs()),
            (None, None) => {}
            _ => out.count_mismatches += 1,
        }
    }
    out.boundary_failures = metric_boundaries();
    out
}

/// Edge cases with known answers; returns a description of each failure.
pub fn metric_boundaries() -> Vec<String> {
    let mut fails = Vec::new();
    let mut expect = |what: &str, ok: bool| {
        if !ok {
            fails.push(what.to_string());
        }
    };
    // 3 / 20 rounds to the same double as 0.15, so this sits exactly on the
    // threshold and must not count.
    let on = relative_error(17.0, 20.0).unwrap();
    expect("RE exactly at threshold", on == Some(REPRODUCIBLE_RE));
    expect(
        "RE at threshold is not reproducible",
        ReproducibleCount::from_errors(&[on], REPRODUCIBLE_RE).count == 0,
    );
    expect(
        "RE just below threshold counts",
        ReproducibleCount::from_errors(&[Some(0.149_999_999)], REPRODUCIBLE_RE).count == 1,
    );
    expect("negative target", relative_error(-17.0, -20.0).unwrap() == Some(REPRODUCIBLE_RE));
    expect("zero over zero", relative_error(0.0, 0.0).unwrap() == Some(0.0));
    expect("nonzero over zero", relative_error(1e-9, 0.0).unwrap().is_none());
    expect("non-finite RE input", relative_error(f64::NAN, 1.0).is_err());
    let undefined = ReproducibleCount::from_errors(&[None, Some(0.0)], REPRODUCIBLE_RE);
    expect(
        "undefined left out of total",
        undefined.total == 1 && undefined.undefined == 1 && undefined.count == 1,
    );
    expect(
        "threshold 0 counts nothing",
        ReproducibleCount::from_errors(&[Some(0.0), Some(0.1)], 0.0).count == 0,
    );

    let t = [1.0, 2.0, 3.0, 4.0];
    expect("identical groups", ccc(&t, &t).unwrap().ccc == Some(1.0));
    let flipped: Vec<f64> = t.iter().map(|v| 5.0 - v).collect();
    expect(
        "reflected groups",
        (ccc(&flipped, &t).unwrap().ccc.unwrap() + 1.0).abs() < 1e-15,
    );
    expect("both constant", ccc(&[2.0; 4], &[2.0; 4]).unwrap().ccc.is_none());
    expect("one constant", ccc(&[2.0; 4], &t).unwrap().ccc == Some(0.0));
    let shifted: Vec<f64> = t.iter().map(|v| v + 10.0).collect();
    expect(
        "mean shift lowers concordance",
        ccc(&shifted, &t).unwrap().ccc.unwrap() < 0.1,
    );
    expect("single pair", ccc(&[1.0], &[1.0]).is_err());
    expect("length mismatch", ccc(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
    expect("non-finite group", ccc(&[1.0, f64::INFINITY], &[1.0, 2.0]).is_err());
    fails
}

// -------------------------------------------------------------- radiomics

/// Random grid with roughly 80% of pixels in the mask.
pub fn random_quantized(rng: &mut Rng, h: usize, w: usize) -> Quantized {
    loop {
        let n_levels = 2 + rng.below(7);
        let levels: Vec<u16> = (0..h * w)
            .map(|_| {
                if rng.below(5) == 0 {
                    0
                } else {
                    1 + rng.below(n_levels) as u16
                }
            })
            .collect();
        if let Ok(q) = Quantized::from_levels(h, w, n_levels, levels) {
            if glcm_oracle_matrix(&q, &FOUR_DIRECTIONS).is_some() && ngtdm_oracle(&q, 1).is_some() {
                return q;
            }
        }
    }
}

fn pixels_of(q: &Quantized) -> Vec<(isize, isize, usize)> {
    let mut out = Vec::new();
    for r in 0..q.height {
        for c in 0..q.width {
            let l = q.levels[r * q.width + c];
            if l > 0 {
                out.push((r as isize, c as isize, l as usize));
            }
        }
    }
    out
}

/// Averaged symmetric co-occurrence matrix from an all-pairs scan, or
/// `None` if some offset has no pair.
pub fn glcm_oracle_matrix(q: &Quantized, offsets: &[(i32, i32)]) -> Option<Vec<Vec<f64>>> {
    let n = q.n_levels;
    let px = pixels_of(q);
    let mut avg = vec![vec![0.0; n]; n];
    for &(dr, dc) in offsets {
        let mut m = vec![vec![0.0; n]; n];
        let mut total = 0.0;
        for &(r1, c1, a) in &px {
            for &(r2, c2, b) in &px {
                let d = (r2 - r1, c2 - c1);
                if d == (dr as isize, dc as isize) || d == (-dr as isize, -dc as isize) {
                    m[a - 1][b - 1] += 1.0;
                    total += 1.0;
                }
            }
        }
        if total == 0.0 {
            return None;
        }
        for i in 0..n {
            for j in 0..n {
                avg[i][j] += m[i][j] / total / offsets.len() as f64;
            }
        }
    }
    Some(avg)
}

/// energy, contrast, correlation, homogeneity, entropy, dissimilarity.
pub fn glcm_oracle_features(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let lv = |i: usize| (i + 1) as f64;
    let px: Vec<f64> = (0..n).map(|i| p[i].iter().sum()).collect();
    let py: Vec<f64> = (0..n).map(|j| (0..n).map(|i| p[i][j]).sum()).collect();
    let mx: f64 = (0..n).map(|i| lv(i) * px[i]).sum();
    let my: f64 = (0..n).map(|j| lv(j) * py[j]).sum();
    let sx = (0..n).map(|i| (lv(i) - mx).powi(2) * px[i]).sum::<f64>().sqrt();
    let sy = (0..n).map(|j| (lv(j) - my).powi(2) * py[j]).sum::<f64>().sqrt();
    let mut f = [0.0; 6];
    let mut cross = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = p[i][j];
            let d = lv(i) - lv(j);
            f[0] += v * v;
            f[1] += d * d * v;
            f[3] += v / (1.0 + d * d);
            if v > 0.0 {
                f[4] -= v * v.log2();
            }
            f[5] += d.abs() * v;
            cross += (lv(i) - mx) * (lv(j) - my) * v;
        }
    }
    f[2] = if sx * sy > 0.0 { cross / (sx * sy) } else { 1.0 };
    f.to_vec()
}

/// Run counts `[level - 1][length - 1]` from walking every full line
/// through the grid along `dir`.
pub fn glrlm_oracle_counts(q: &Quantized, dir: (i32, i32)) -> Vec<Vec<u64>> {
    let (h, w) = (q.height as isize, q.width as isize);
    let (dr, dc) = (dir.0 as isize, dir.1 as isize);
    let inside = |r: isize, c: isize| r >= 0 && c >= 0 && r < h && c < w;
    let maxlen = q.height.max(q.width);
    let mut counts = vec![vec![0u64; maxlen]; q.n_levels];
    for r0 in 0..h {
        for c0 in 0..w {
            if inside(r0 - dr, c0 - dc) {
                continue; // not the first pixel of its line
            }
            let mut line = Vec::new();
            let (mut r, mut c) = (r0, c0);
            while inside(r, c) {
                line.push(q.levels[(r * w + c) as usize]);
                r += dr;
                c += dc;
            }
            let mut i = 0;
            while i < line.len() {
                let mut j = i;
                while j < line.len() && line[j] == line[i] {
                    j += 1;
                }
                if line[i] > 0 {
                    counts[line[i] as usize - 1][j - i - 1] += 1;
                }
                i = j;
            }
        }
    }
    counts
}

/// sre, lre, gln, rln, rp averaged over directions.
pub fn glrlm_oracle_features(q: &Quantized, dirs: &[(i32, i32)]) -> Vec<f64> {
    let np = pixels_of(q).len() as f64;
    let mut acc = vec![0.0; 5];
    for &d in dirs {
        let m = glrlm_oracle_counts(q, d);
        let nr: f64 = m.iter().flatten().map(|&v| v as f64).sum();
        let mut f = [0.0; 5];
        for row in &m {
            let rs: f64 = row.iter().map(|&v| v as f64).sum();
            f[2] += rs * rs;
            for (j, &v) in row.iter().enumerate() {
                let l = (j + 1) as f64;
                f[0] += v as f64 / (l * l);
                f[1] += v as f64 * l * l;
            }
        }
        for j in 0..m[0].len() {
            let cs: f64 = m.iter().map(|row| row[j] as f64).sum();
            f[3] += cs * cs;
        }
        f[4] = nr;
        let scaled = [f[0] / nr, f[1] / nr, f[2] / nr, f[3] / nr, f[4] / np];
        for k in 0..5 {
            acc[k] += scaled[k] / dirs.len() as f64;
        }
    }
    acc
}

/// Per-level `(n_i, s_i)` from an all-pairs Chebyshev scan, or `None` when
/// no pixel has a neighbour.
pub fn ngtdm_oracle(q: &Quantized, radius: usize) -> Option<Vec<(usize, f64)>> {
    let px = pixels_of(q);
    let mut table = vec![(0usize, 0.0); q.n_levels];
    for (k, &(r, c, l)) in px.iter().enumerate() {
        let neigh: Vec<f64> = px
            .iter()
            .enumerate()
            .filter(|(m, &(r2, c2, _))| {
                *m != k && (r2 - r).abs().max((c2 - c).abs()) <= radius as isize
            })
            .map(|(_, p)| p.2 as f64)
            .collect();
        if neigh.is_empty() {
            continue;
        }
        let mean = neigh.iter().sum::<f64>() / neigh.len() as f64;
        table[l - 1].0 += 1;
        table[l - 1].1 += (l as f64 - mean).abs();
    }
    if table.iter().all(|e| e.0 == 0) {
        None
    } else {
        Some(table)
    }
}

/// coarseness, contrast, busyness, complexity, strength.
pub fn nid_oracle_features(table: &[(usize, f64)]) -> Vec<f64> {
    let nvp: f64 = table.iter().map(|e| e.0 as f64).sum();
    let lv: Vec<usize> = (0..table.len()).filter(|&i| table[i].0 > 0).collect();
    let p = |i: usize| table[i].0 as f64 / nvp;
    let s = |i: usize| table[i].1;
    let g = |i: usize| (i + 1) as f64;
    let ng = lv.len() as f64;
    let sum_ps: f64 = lv.iter().map(|&i| p(i) * s(i)).sum();
    let sum_s: f64 = lv.iter().map(|&i| s(i)).sum();
    let coarseness = if sum_ps == 0.0 { COARSENESS_CAP } else { 1.0 / sum_ps };
    let (mut c2, mut bden, mut cplx, mut snum) = (0.0, 0.0, 0.0, 0.0);
    for &i in &lv {
        for &j in &lv {
            let d = g(i) - g(j);
            c2 += p(i) * p(j) * d * d;
            bden += (g(i) * p(i) - g(j) * p(j)).abs();
            cplx += d.abs() * (p(i) * s(i) + p(j) * s(j)) / (p(i) + p(j));
            snum += (p(i) + p(j)) * d * d;
        }
    }
    let contrast = if ng > 1.0 {
        c2 / (ng * (ng - 1.0)) * (sum_s / nvp)
    } else {
        0.0
    };
    vec![
        coarseness,
        contrast,
        if bden == 0.0 { 0.0 } else { sum_ps / bden },
        cplx / nvp,
        if sum_s == 0.0 { 0.0 } else { snum / sum_s },
    ]
}

/// Level of `v` by counting the bin edges at or below it.
pub fn level_oracle(v: f64, n: usize, low: f64, high: f64) -> usize {
    let w = (high - low) / n as f64;
    1 + (1..n).filter(|&k| v >= low + k as f64 * w).count()
}

/// mean, median, std, min, max, range, skewness, kurtosis, energy.
pub fn id_oracle(vals: &[f64]) -> Vec<f64> {
    let n = vals.len() as f64;
    let mut s = vals.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = vals.iter().sum::<f64>() / n;
    let m = |k: i32| vals.iter().map(|v| (v - mean).powi(k)).sum::<f64>() / n;
    let var = m(2);
    let median = if s.len() % 2 == 0 {
        (s[s.len() / 2 - 1] + s[s.len() / 2]) / 2.0
    } else {
        s[s.len() / 2]
    };
    let (skew, kurt) = if var > 0.0 {
        (m(3) / var.powf(1.5), m(4) / (var * var) - 3.0)
    } else {
        (0.0, 0.0)
    };
    let lo = s[0];
    let hi = s[s.len() - 1];
    vec![mean, median, var.sqrt(), lo, hi, hi - lo, skew, kurt, vals.iter().map(|v| v * v).sum()]
}

/// entropy, uniformity, p10, p50, p90 (nearest rank).
pub fn ih_oracle(vals: &[f64], bins: usize, low: f64, high: f64) -> Vec<f64> {
    let mut hist = vec![0.0; bins];
    for &v in vals {
        hist[level_oracle(v, bins, low, high) - 1] += 1.0;
    }
    let n = vals.len() as f64;
    let entropy: f64 = hist.iter().filter(|&&c| c > 0.0).map(|&c| -(c / n) * (c / n).log2()).sum();
    let uniformity: f64 = hist.iter().map(|&c| (c / n) * (c / n)).sum();
    let mut s = vals.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pct = |p: usize| {
        // smallest rank k with k / n >= p / 100
        let k = (1..=s.len()).find(|&k| 100 * k >= p * s.len()).unwrap();
        s[k - 1]
    };
    vec![entropy + 0.0, uniformity, pct(10), pct(50), pct(90)]
}

/// Orientation fractions then entropy, from central differences on
/// pixels whose four neighbours are in the mask.
pub fn goh_oracle(img: &ImageSlice, mask: &Mask, bins: usize) -> Vec<f64> {
    let (h, w) = img.dims();
    let inm = |r: isize, c: isize| r >= 0 && c >= 0 && (r as usize) < h && (c as usize) < w && mask.contains(r as usize, c as usize);
    let val = |r: isize, c: isize| img.get(r as usize, c as usize);
    let mut hist = vec![0.0; bins];
    for r in 0..h as isize {
        for c in 0..w as isize {
            if !(inm(r, c) && inm(r - 1, c) && inm(r + 1, c) && inm(r, c - 1) && inm(r, c + 1)) {
                continue;
            }
            let gx = (val(r, c + 1) - val(r, c - 1)) / 2.0;
            let gy = (val(r + 1, c) - val(r - 1, c)) / 2.0;
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let deg = gy.atan2(gx).to_degrees().rem_euclid(360.0);
            let b = ((deg / (360.0 / bins as f64)).floor() as usize).min(bins - 1);
            hist[b] += mag;
        }
    }
    let total: f64 = hist.iter().sum();
    let mut f: Vec<f64> = hist.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();
    let e: f64 = f.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.log2()).sum();
    f.push(e + 0.0);
    f
}

/// Random image whose values sit well inside the quantization bins, with
/// a mask that keeps at least one interior pixel.
pub fn random_image(rng: &mut Rng, h: usize, w: usize, cfg: &RadiomicsConfig) -> (ImageSlice, Mask) {
    let q = cfg.quantization;
    let bw = (q.high - q.low) / q.n_levels as f64;
    // A narrow band of levels so texture matrices are not all-distinct.
    let base = rng.below(q.n_levels - 6);
    let span = 2 + rng.below(5);
    let px: Vec<f64> = (0..h * w)
        .map(|_| {
            let k = base + rng.below(span);
            q.low + (k as f64 + 0.15 + 0.7 * rng.uniform()) * bw
        })
        .collect();
    let img = ImageSlice::new(h, w, px).unwrap();
    loop {
        let bits: Vec<bool> = (0..h * w).map(|_| rng.below(100) < 85).collect();
        let mask = Mask::new(h, w, bits).unwrap();
        let interior = (1..h - 1).any(|r| {
            (1..w - 1).any(|c| {
                mask.contains(r, c)
                    && mask.contains(r - 1, c)
                    && mask.contains(r + 1, c)
                    && mask.contains(r, c - 1)
                    && mask.contains(r, c + 1)
            })
        });
        if interior {
            return (img, mask);
        }
    }
}

#[derive(Debug, Default)]
pub struct RadiomicsCheck {
    pub fixtures: usize,
    pub max_matrix_err: f64,
    pub max_feature_err: f64,
    pub worst_feature: String,
    pub mismatches: usize,
}

impl RadiomicsCheck {
    pub fn passed(&self, tol: f64) -> bool {
        self.max_matrix_err <= tol && self.max_feature_err <= tol && self.mismatches == 0
    }

    fn feature(&mut self, name: &str, got: f64, want: f64) {
        let e = scaled_diff(got, want);
        if e > self.max_feature_err || e.is_nan() {
            self.max_feature_err = if e.is_nan() { f64::INFINITY } else { e };
            self.worst_feature = name.to_string();
        }
    }
}

/// Matrices and per-class features on `n` random `size x size` grids, and
/// every extracted feature on `n` random images.
pub fn check_radiomics(n: usize, size: usize, seed: u64) -> RadiomicsCheck {
    let mut rng = Rng::new(seed);
    let mut out = RadiomicsCheck {
        fixtures: n,
        ..Default::default()
    };
    for _ in 0..n {
        let q = random_quantized(&mut rng, size, size);
        let nl = q.n_levels;

        // GLCM, per offset and averaged
        for &o in &FOUR_DIRECTIONS {
            let got = glcm_matrix(&q, o).unwrap();
            let want = glcm_oracle_matrix(&q, &[o]).unwrap();
            for i in 0..nl {
                for j in 0..nl {
                    out.max_matrix_err = out.max_matrix_err.max((got[i * nl + j] - want[i][j]).abs());
                }
            }
        }
        let want = glcm_oracle_matrix(&q, &FOUR_DIRECTIONS).unwrap();
        let got = glcm_matrix_averaged(&q, &FOUR_DIRECTIONS).unwrap();
        for i in 0..nl {
            for j in 0..nl {
                out.max_matrix_err = out.max_matrix_err.max((got[i * nl + j] - want[i][j]).abs());
            }
        }
        for (k, (g, w)) in glcm_features(&q, &FOUR_DIRECTIONS)
            .unwrap()
            .iter()
            .zip(glcm_oracle_features(&want))
            .enumerate()
        {
            out.feature(&format!("glcm[{k}]"), *g, w);
        }

        // GLRLM
        for &d in &FOUR_DIRECTIONS {
            let m = glrlm_matrix(&q, d).unwrap();
            let want = glrlm_oracle_counts(&q, d);
            for (i, row) in want.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    if m.get(i + 1, j + 1) != v {
                        out.mismatches += 1;
                    }
                }
            }
        }
        for (k, (g, w)) in glrlm_features(&q, &FOUR_DIRECTIONS)
            .unwrap()
            .iter()
            .zip(glrlm_oracle_features(&q, &FOUR_DIRECTIONS))
            .enumerate()
        {
            out.feature(&format!("glrlm[{k}]"), *g, w);
        }

        // NGTDM
        for radius in [1, 2] {
            let t = ngtdm_table(&q, radius).unwrap();
            let want = ngtdm_oracle(&q, radius).unwrap();
            for (i, &(cnt, s)) in want.iter().enumerate() {
                if t.counts[i] != cnt {
                    out.mismatches += 1;
                }
                out.max_matrix_err = out.max_matrix_err.max(scaled_diff(t.diffs[i], s));
            }
            for (k, (g, w)) in nid_features(&q, radius)
                .unwrap()
                .iter()
                .zip(nid_oracle_features(&want))
                .enumerate()
            {
                out.feature(&format!("nid[{k}] r{radius}"), *g, w);
            }
        }
    }

    // Every class through the full extractor.
    let cfg = RadiomicsConfig::default();
    let qs = cfg.quantization;
    for _ in 0..n {
        let (img, mask) = random_image(&mut rng, size, size, &cfg);
        let fv = extract_all(&img, &mask, &cfg).unwrap();
        let q = quantize(&img, &mask, &qs).unwrap();
        let (h, w) = img.dims();
        let mut vals = Vec::new();
        for r in 0..h {
            for c in 0..w {
                let want = if mask.contains(r, c) {
                    vals.push(img.get(r, c));
                    level_oracle(img.get(r, c), qs.n_levels, qs.low, qs.high)
                } else {
                    0
                };
                if q.levels[r * w + c] as usize != want {
                    out.mismatches += 1;
                }
            }
        }
        let mut want = goh_oracle(&img, &mask, cfg.goh_bins);
        let p = glcm_oracle_matrix(&q, &cfg.glcm_offsets).expect("fixture has GLCM pairs");
        want.extend(glcm_oracle_features(&p));
        want.extend(glrlm_oracle_features(&q, &cfg.glrlm_directions));
        want.extend(id_oracle(&vals));
        want.extend(ih_oracle(&vals, cfg.ih_bins, qs.low, qs.high));
        want.extend(nid_oracle_features(&ngtdm_oracle(&q, cfg.nid_radius).expect("fixture has neighbours")));
        if want.len() != fv.len() {
            out.mismatches += 1;
            continue;
        }
        for (f, w) in fv.features.iter().zip(want) {
            out.feature(&f.name, f.value, w);
        }
    }
    out
}

// -------------------------------------------------------------- diffusion

#[derive(Debug, Default)]
pub struct DiffusionCheck {
    /// Largest relative gap between `alpha_bar_t` and `exp(sum log alpha)`.
    pub max_log_product_err: f64,
    pub monotone: bool,
    /// Largest moment deviation in units of its standard error.
    pub max_moment_sigma: f64,
    /// Largest gap between the sampler's reverse mean and the posterior.
    pub max_posterior_err: f64,
}

impl DiffusionCheck {
    pub fn passed(&self) -> bool {
        self.monotone && self.max_log_product_err <= 1e-12 && self.max_moment_sigma <= 4.0 && self.max_posterior_err <= 1e-8
    }
}

/// Predicts exactly the noise that takes a known `x0` to `z_t`.
pub struct OracleDenoiser {
    pub x0: Vec<f64>,
    pub schedule: NoiseSchedule,
}

impl NoisePredictor for OracleDenoiser {
    fn latent_dim(&self) -> usize {
        self.x0.len()
    }

    fn predict(&self, z_t: &[f64], t: usize, _cond: &[f64]) -> Result<Vec<f64>> {
        let ab = self.schedule.alpha_bar[t - 1];
        Ok(z_t.iter().zip(&self.x0).map(|(z, x)| (z - ab.sqrt() * x) / (1.0 - ab).sqrt()).collect())
    }
}

/// Mean of `q(x_{t-1} | x_t, x_0)`.
pub fn posterior_mean(schedule: &NoiseSchedule, t: usize, x_t: &[f64], x0: &[f64]) -> Vec<f64> {
    let beta = schedule.beta[t - 1];
    let ab: f64 = schedule.alpha[..t].iter().product();
    let ab_prev: f64 = schedule.alpha[..t - 1].iter().product();
    let a = 1.0 - beta;
    x_t.iter()
        .zip(x0)
        .map(|(xt, x)| (ab_prev.sqrt() * beta * x + a.sqrt() * (1.0 - ab_prev) * xt) / (1.0 - ab))
        .collect()
}

pub fn check_diffusion(mc_draws: usize, seed: u64) -> DiffusionCheck {
    let mut rng = Rng::new(seed);
    let mut out = DiffusionCheck {
        monotone: true,
        ..Default::default()
    };
    for &(steps, lo, hi) in &[(2, 1e-4, 0.02), (10, 1e-3, 0.2), (1000, 1e-4, 0.02), (4000, 1e-5, 0.05)] {
        let s = build_schedule(steps, lo, hi).unwrap();
        let mut log_sum = 0.0;
        for t in 1..=steps {
            log_sum += (-s.beta_at(t)).ln_1p();
            let want = log_sum.exp();
            out.max_log_product_err = out.max_log_product_err.max((s.alpha_bar_at(t) - want).abs() / want);
            if (s.alpha_at(t) - (1.0 - s.beta_at(t))).abs() > 0.0 {
                out.monotone = false;
            }
            let ab = s.alpha_bar_at(t);
            if !(ab > 0.0 && ab < 1.0) || (t > 1 && !(ab < s.alpha_bar_at(t - 1))) {
                out.monotone = false;
            }
        }
    }

    // Monte-Carlo moments of the forward marginal.
    let s = build_schedule(1000, 1e-4, 0.02).unwrap();
    let d = 4;
    let z0 = LatentVector((0..d).map(|_| rng.range(-2.0, 2.0)).collect());
    for &t in &[1usize, 10, 250, 1000] {
        let ab = s.alpha_bar_at(t);
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for _ in 0..mc_draws {
            let eta = LatentVector((0..d).map(|_| rng.normal()).collect());
            let z = q_sample(&z0, t, &eta, &s).unwrap();
            for k in 0..d {
                sum[k] += z.0[k];
                sq[k] += z.0[k] * z.0[k];
            }
        }
        let n = mc_draws as f64;
        for k in 0..d {
            let mean = sum[k] / n;
            let var = (sq[k] - n * mean * mean) / (n - 1.0);
            let want_var = 1.0 - ab;
            let se_mean = (want_var / n).sqrt();
            let se_var = want_var * (2.0 / (n - 1.0)).sqrt();
            out.max_moment_sigma = out
                .max_moment_sigma
                .max(((mean - ab.sqrt() * z0.0[k]) / se_mean).abs())
                .max(((var - want_var) / se_var).abs());
        }
    }

    // Reverse step with an oracle denoiser.
    for steps in [1usize, 2] {
        let schedule = if steps == 1 {
            NoiseSchedule::from_betas(vec![0.3]).unwrap()
        } else {
            build_schedule(2, 0.1, 0.4).unwrap()
        };
        let x0: Vec<f64> = (0..d).map(|_| rng.range(-1.5, 1.5)).collect();
        let model = OracleDenoiser {
            x0: x0.clone(),
            schedule: schedule.clone(),
        };
        let cond = LatentVector(vec![0.0; d]);
        for t in 1..=steps {
            for _ in 0..20 {
                let x_t: Vec<f64> = (0..d).map(|_| 2.0 * rng.normal()).collect();
                let want = posterior_mean(&schedule, t, &x_t, &x0);
                for clip in [None, Some(1e6)] {
                    let got = reverse_mean(&model, &x_t, t, &cond, &schedule, clip).unwrap();
                    for (g, w) in got.iter().zip(&want) {
                        out.max_posterior_err = out.max_posterior_err.max((g - w).abs());
                    }
                }
            }
        }
        // The final step is noise-free, so the chain lands on x0.
        let traj = sample_trajectory(&model, &cond, &schedule, None, 11).unwrap();
        for (g, w) in traj.last().unwrap().0.iter().zip(&x0) {
            out.max_posterior_err = out.max_posterior_err.max((g - w).abs());
        }
    }
    out
}

// -------------------------------------------------------------- gradients

/// `||g - g_fd|| / max(||g||, ||g_fd||)` over all parameters.
fn relative_gap(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-300)
}

pub fn micro_codec_config() -> CodecConfig {
    CodecConfig {
        image_height: 4,
        image_width: 4,
        latent_dim: 2,
        encoder_widths: vec![1],
        decoder_widths: vec![1, 1],
        seed: 5,
        ..CodecConfig::default()
    }
}

/// Central-difference check of the codec reconstruction loss.
pub fn codec_gradient_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let cfg = micro_codec_config();
    let mut model = init_codec(&cfg).unwrap();
    let px: Vec<f64> = (0..16).map(|_| rng.range(-1000.0, 400.0)).collect();
    let img = ImageSlice::new(4, 4, px).unwrap();
    let (_, grads) = model.reconstruction_loss_grad(&img).unwrap();
    let analytic: Vec<f64> = grads.0.iter().flatten().copied().collect();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..model.params().tensors.len() {
        for i in 0..model.params().tensors[k].data.len() {
            let v = model.params().tensors[k].data[i];
            model.params_mut().tensors[k].data[i] = v + h;
            let up = model.reconstruction_loss(&img).unwrap();
            model.params_mut().tensors[k].data[i] = v - h;
            let down = model.reconstruction_loss(&img).unwrap();
            model.params_mut().tensors[k].data[i] = v;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    relative_gap(&analytic, &numeric)
}

pub fn micro_denoiser_config() -> DenoiserConfig {
    DenoiserConfig {
        latent_dim: 4,
        hidden_widths: vec![6],
        time_embedding_dim: 4,
        steps: 10,
        seed: 9,
    }
}

/// Central-difference check of the combined squared + L1 noise loss. The
/// zero-initialized output layer is randomized first so every layer has a
/// non-trivial gradient.
pub fn denoiser_gradient_error(seed: u64) -> f64 {
    let mut rng = Rng::new(seed);
    let cfg = micro_denoiser_config();
    let schedule = build_schedule(cfg.steps, 1e-3, 0.2).unwrap();
    let mut model = DenoiserModel::new(&cfg).unwrap();
    for t in model.params_mut().tensors.iter_mut() {
        for v in t.data.iter_mut() {
            *v += 0.3 * rng.normal();
        }
    }
    let vec3 = |rng: &mut Rng| LatentVector((0..4).map(|_| rng.normal()).collect());
    let (za, zb, eta) = (vec3(&mut rng), vec3(&mut rng), vec3(&mut rng));
    let t = 4;
    let (_, grads) = diffusion_loss_grad(&model, &za, &zb, t, &eta, &schedule, 1.0).unwrap();
    let analytic: Vec<f64> = grads.0.iter().flatten().copied().collect();
    let h = 1e-6;
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..model.params().tensors.len() {
        for i in 0..model.params().tensors[k].data.len() {
            let v = model.params().tensors[k].data[i];
            model.params_mut().tensors[k].data[i] = v + h;
            let up = diffusion_loss(&model, &za, &zb, t, &eta, &schedule, 1.0).unwrap();
            model.params_mut().tensors[k].data[i] = v - h;
            let down = diffusion_loss(&model, &za, &zb, t, &eta, &schedule, 1.0).unwrap();
            model.params_mut().tensors[k].data[i] = v;
            numeric.push((up - down) / (2.0 * h));
        }
    }
    relative_gap(&analytic, &numeric)
}
