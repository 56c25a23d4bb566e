//! Relative error, reproducibility counts and concordance correlation.
//!
//! Throughout, `s` is the synthesized (or non-standard) side and `t` the
//! standard target. The relative error divides by `|f_t|`; a zero target
//! gives zero error for a zero synthesized value and an undefined error
//! otherwise. Undefined errors are left out of counts and totals.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

#[allow(unused_imports)] // shadowed by std float methods when std is linked
use crate::math;
use serde::{Deserialize, Serialize};

use crate::radiomics::{FeatureClass, FeatureVector};
use crate::{Error, Result};

/// Threshold below which a feature counts as reproducible.
pub const REPRODUCIBLE_RE: f64 = 0.15;

/// `|f_t - f_s| / |f_t|`, or `None` when `f_t = 0` and `f_s != 0`.
pub fn relative_error(f_s: f64, f_t: f64) -> Result<Option<f64>> {
    if !f_s.is_finite() || !f_t.is_finite() {
        return Err(Error::Numeric {
            step: 0,
            what: format!("relative error of non-finite values ({f_s}, {f_t})"),
        });
    }
    if f_t == 0.0 {
        return Ok(if f_s == 0.0 { Some(0.0) } else { None });
    }
    Ok(Some((f_t - f_s).abs() / f_t.abs()))
}

/// Relative error of one named feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReResult {
    pub name: String,
    pub class: FeatureClass,
    pub f_s: f64,
    pub f_t: f64,
    pub re: Option<f64>,
}

fn check_aligned(s: &FeatureVector, t: &FeatureVector) -> Result<()> {
    if !s.same_layout(t) {
        return Err(Error::Alignment(
            "feature vectors differ in names or order".into(),
        ));
    }
    Ok(())
}

/// Per-feature relative errors of two aligned vectors.
pub fn relative_errors(s: &FeatureVector, t: &FeatureVector) -> Result<Vec<ReResult>> {
    check_aligned(s, t)?;
    s.features
        .iter()
        .zip(&t.features)
        .map(|(a, b)| {
            Ok(ReResult {
                name: a.name.clone(),
                class: a.class,
                f_s: a.value,
                f_t: b.value,
                re: relative_error(a.value, b.value)?,
            })
        })
        .collect()
}

/// Outcome of thresholding a set of relative errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReproducibleCount {
    pub count: usize,
    /// Defined errors only.
    pub total: usize,
    pub undefined: usize,
    /// `Some(re < threshold)` per feature, `None` where undefined.
    pub flags: Vec<Option<bool>>,
}

impl ReproducibleCount {
    pub fn from_errors(errors: &[Option<f64>], threshold: f64) -> Self {
        let flags: Vec<Option<bool>> = errors.iter().map(|e| e.map(|re| re < threshold)).collect();
        Self {
            count: flags.iter().filter(|f| **f == Some(true)).count(),
            total: flags.iter().filter(|f| f.is_some()).count(),
            undefined: flags.iter().filter(|f| f.is_none()).count(),
            flags,
        }
    }

    /// `count / total`, or 0 with no defined errors.
    pub fn fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }
}

/// Features of `s` whose relative error to `t` is strictly below `threshold`.
pub fn reproducible_count(s: &FeatureVector, t: &FeatureVector, threshold: f64) -> Result<ReproducibleCount> {
    let errors: Vec<Option<f64>> = relative_errors(s, t)?.into_iter().map(|r| r.re).collect();
    Ok(ReproducibleCount::from_errors(&errors, threshold))
}

/// Reproducible counts at each threshold for a pooled set of errors.
pub fn re_curve_from_errors(errors: &[Option<f64>], thresholds: &[f64]) -> Result<Vec<(f64, usize)>> {
    if thresholds.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::validation("thresholds must be sorted ascending"));
    }
    let mut defined: Vec<f64> = errors.iter().flatten().copied().collect();
    defined.sort_by(f64::total_cmp);
    Ok(thresholds
        .iter()
        .map(|&th| (th, defined.partition_point(|&re| re < th)))
        .collect())
}

/// [`re_curve_from_errors`] for one pair of vectors.
pub fn re_threshold_curve(s: &FeatureVector, t: &FeatureVector, thresholds: &[f64]) -> Result<Vec<(f64, usize)>> {
    let errors: Vec<Option<f64>> = relative_errors(s, t)?.into_iter().map(|r| r.re).collect();
    re_curve_from_errors(&errors, thresholds)
}

/// Concordance correlation of two paired groups with population moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CccResult {
    /// `None` when both groups are constant.
    pub ccc: Option<f64>,
    pub n: usize,
    pub mean_s: f64,
    pub mean_t: f64,
    pub std_s: f64,
    pub std_t: f64,
    /// `None` when either group is constant.
    pub pearson: Option<f64>,
}

pub fn ccc(s: &[f64], t: &[f64]) -> Result<CccResult> {
    if s.len() != t.len() {
        return Err(Error::Alignment(format!(
            "groups of length {} and {}",
            s.len(),
            t.len()
        )));
    }
    if s.len() < 2 {
        return Err(Error::validation("concordance needs at least 2 paired values"));
    }
    if s.iter().chain(t).any(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            step: 0,
            what: "non-finite value in concordance group".into(),
        });
    }
    let n = s.len() as f64;
    let mean_s = s.iter().sum::<f64>() / n;
    let mean_t = t.iter().sum::<f64>() / n;
    let (mut vs, mut vt, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in s.iter().zip(t) {
        let (da, db) = (a - mean_s, b - mean_t);
        vs += da * da;
        vt += db * db;
        cov += da * db;
    }
    vs /= n;
    vt /= n;
    cov /= n;
    let (std_s, std_t) = (math::sqrt(vs), math::sqrt(vt));
    let pearson = if vs > 0.0 && vt > 0.0 {
        Some((cov / (std_s * std_t)).clamp(-1.0, 1.0))
    } else {
        None
    };
    let ccc = if vs > 0.0 || vt > 0.0 {
        let dm = mean_s - mean_t;
        Some((2.0 * cov / (vs + vt + dm * dm)).clamp(-1.0, 1.0))
    } else {
        None
    };
    Ok(CccResult {
        ccc,
        n: s.len(),
        mean_s,
        mean_t,
        std_s,
        std_t,
        pearson,
    })
}

/// Per-feature min-max scaling fitted on a cohort of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureNormalizer {
    pub names: Vec<String>,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl FeatureNormalizer {
    pub fn fit<'a>(cohort: impl IntoIterator<Item = &'a FeatureVector>) -> Result<Self> {
        let mut iter = cohort.into_iter();
        let first = iter
            .next()
            .ok_or_else(|| Error::validation("cannot fit a normalizer on an empty cohort"))?;
        let names: Vec<String> = first.features.iter().map(|f| f.name.clone()).collect();
        let mut min = first.values();
        let mut max = min.clone();
        for v in iter {
            check_aligned(first, v)?;
            for (i, f) in v.features.iter().enumerate() {
                min[i] = min[i].min(f.value);
                max[i] = max[i].max(f.value);
            }
        }
        Ok(Self { names, min, max })
    }

    /// Maps the fitted range of feature `i` onto `[0, 1]`; a feature that was
    /// constant over the cohort maps to 0.
    pub fn apply(&self, i: usize, v: f64) -> f64 {
        let span = self.max[i] - self.min[i];
        if span > 0.0 {
            (v - self.min[i]) / span
        } else {
            0.0
        }
    }
}

/// Concordance between the features of `class` in `s` and in `t`, paired
/// by name, after optional cohort normalization.
pub fn ccc_by_class(
    s: &FeatureVector,
    t: &FeatureVector,
    class: FeatureClass,
    normalizer: Option<&FeatureNormalizer>,
) -> Result<CccResult> {
    check_aligned(s, t)?;
    if let Some(norm) = normalizer {
        if norm.names.len() != s.len() || norm.names.iter().zip(&s.features).any(|(n, f)| *n != f.name) {
            return Err(Error::Alignment("normalizer layout differs from the feature vectors".into()));
        }
    }
    let mut gs = Vec::new();
    let mut gt = Vec::new();
    for (i, (a, b)) in s.features.iter().zip(&t.features).enumerate() {
        if a.class != class {
            continue;
        }
        match normalizer {
            Some(norm) => {
                gs.push(norm.apply(i, a.value));
                gt.push(norm.apply(i, b.value));
            }
            None => {
                gs.push(a.value);
                gt.push(b.value);
            }
        }
    }
    if gs.len() < 2 {
        return Err(Error::validation(format!(
            "class {class} has {} features, need at least 2",
            gs.len()
        )));
    }
    ccc(&gs, &gt)
}

/// Mean and population standard deviation of defined values.
pub fn mean_std(values: impl IntoIterator<Item = f64>) -> Option<(f64, f64, usize)> {
    let v: Vec<f64> = values.into_iter().collect();
    if v.is_empty() {
        return None;
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    Some((m, math::sqrt(var), v.len()))
}
