//! Report bundle: metric CSVs, a text summary and per-image feature CSVs.
//!
//! Every real number in a CSV is written with 17 significant digits, and
//! missing values as `NA`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ctharm_core::eval::{Condition, ConditionMetrics, EvalConfig, MetricsBlock, RoiFeatures};
use ctharm_core::radiomics::{FeatureClass, FeatureVector};

use crate::dataset::create_dir;
use crate::pipeline::RunManifest;
use crate::{Error, Result};

pub const CCC_PER_CLASS: &str = "ccc_per_class.csv";
pub const RE_CURVE: &str = "re_curve.csv";
pub const RE_PER_FEATURE: &str = "re_per_feature.csv";
pub const SUMMARY: &str = "summary.txt";
pub const FEATURE_ORDER: &str = "feature_order.csv";

/// `v` with 17 significant digits.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_else(|| "NA".into())
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// All three conditions of the manifest, or the list of what is missing.
fn conditions(manifest: &RunManifest) -> Result<(&MetricsBlock, Vec<&ConditionMetrics>)> {
    let Some(m) = &manifest.metrics else {
        return Err(Error::Validation("manifest is incomplete; missing blocks: metrics".into()));
    };
    let mut missing = Vec::new();
    let mut found = Vec::new();
    for c in Condition::ALL {
        match m.condition(c) {
            Some(x) => found.push(x),
            None => missing.push(format!("metrics.{}", c.as_str())),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Validation(format!(
            "manifest is incomplete; missing blocks: {}",
            missing.join(", ")
        )));
    }
    Ok((m, found))
}

pub fn ccc_csv(conds: &[&ConditionMetrics]) -> String {
    let mut s = String::from("condition,class,mean,std,n\n");
    for c in conds {
        for x in &c.ccc_per_class {
            writeln!(s, "{},{},{},{},{}", c.condition.as_str(), x.class, opt(x.mean), opt(x.std), x.n).unwrap();
        }
    }
    s
}

pub fn re_curve_csv(conds: &[&ConditionMetrics]) -> String {
    let mut s = String::from("threshold");
    for c in conds {
        write!(s, ",{}", c.condition.as_str()).unwrap();
    }
    s.push('\n');
    for (i, (th, _)) in conds[0].re_curve.iter().enumerate() {
        s.push_str(&num(*th));
        for c in conds {
            write!(s, ",{}", c.re_curve[i].1).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn re_per_feature_csv(conds: &[&ConditionMetrics]) -> String {
    let mut s = String::from("condition,feature,class,mean_re,reproducible,defined\n");
    for c in conds {
        for f in &c.re_per_feature {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                c.condition.as_str(),
                f.name,
                f.class,
                opt(f.mean_re),
                f.reproducible,
                f.defined
            )
            .unwrap();
        }
    }
    s
}

fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * count as f64 / total as f64
    }
}

pub fn summary(manifest: &RunManifest, m: &MetricsBlock, conds: &[&ConditionMetrics]) -> String {
    let mut s = String::new();
    writeln!(s, "run {}", manifest.run_id).unwrap();
    writeln!(s, "config sha256 {}", manifest.config_sha256).unwrap();
    writeln!(s, "{} test pairs, {} tumor ROIs", m.n_pairs, m.n_rois).unwrap();
    s.push('\n');
    writeln!(s, "Per-class CCC, mean +/- std over ROIs").unwrap();
    write!(s, "{:<18}", "condition").unwrap();
    for class in FeatureClass::ALL {
        write!(s, "{:>18}", class.as_str()).unwrap();
    }
    s.push('\n');
    for c in conds {
        write!(s, "{:<18}", c.condition.as_str()).unwrap();
        for x in &c.ccc_per_class {
            let cell = match (x.mean, x.std) {
                (Some(m), Some(sd)) => format!("{m:.3} +/- {sd:.3}"),
                _ => "NA".into(),
            };
            write!(s, "{cell:>18}").unwrap();
        }
        s.push('\n');
    }
    s.push('\n');
    writeln!(s, "Reproducible features, RE < {}", m.threshold).unwrap();
    for c in conds {
        let r = &c.reproducible;
        writeln!(
            s,
            "{:<18}{:>6} of {:>6} defined ({:.1}%), {} undefined",
            c.condition.as_str(),
            r.count,
            r.total,
            percent(r.count, r.total),
            r.undefined
        )
        .unwrap();
    }
    let base = &conds[0].reproducible;
    for c in &conds[1..] {
        let r = &c.reproducible;
        let pp = percent(r.count, r.total) - percent(base.count, base.total);
        let gain = if base.count > 0 {
            format!("{:+.1}%", 100.0 * (r.count as f64 - base.count as f64) / base.count as f64)
        } else {
            "n/a".into()
        };
        writeln!(
            s,
            "{} vs baseline: {gain} reproducible features ({pp:+.1} percentage points)",
            c.condition.as_str()
        )
        .unwrap();
    }
    s
}

/// Writes the metric CSVs and the summary for a manifest.
pub fn write_report(manifest: &RunManifest, dir: &Path) -> Result<Vec<PathBuf>> {
    let (m, conds) = conditions(manifest)?;
    create_dir(dir)?;
    Ok(vec![
        write(dir, CCC_PER_CLASS, &ccc_csv(&conds))?,
        write(dir, RE_CURVE, &re_curve_csv(&conds))?,
        write(dir, RE_PER_FEATURE, &re_per_feature_csv(&conds))?,
        write(dir, SUMMARY, &summary(manifest, m, &conds))?,
    ])
}

/// Image roles in the feature CSVs.
pub const IMAGES: [&str; 4] = ["A", "B", "recon", "standardized"];

fn image_features<'a>(r: &'a RoiFeatures, image: &str) -> &'a FeatureVector {
    match image {
        "A" => &r.a,
        "B" => &r.b,
        "recon" => &r.recon,
        _ => &r.standardized,
    }
}

/// One CSV per image role, with the extraction config echoed as `#`
/// comment lines, plus the feature order.
pub fn write_features(rois: &[RoiFeatures], config: &EvalConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let echo = serde_json::to_string(&config.radiomics).expect("radiomics config serializes");
    let mut files = Vec::new();
    for image in IMAGES {
        let mut s = format!("# image: {image}\n# radiomics: {echo}\n");
        s.push_str("slice_id,roi_id,feature_name,feature_class,value\n");
        for r in rois {
            for f in &image_features(r, image).features {
                writeln!(s, "{},{},{},{},{}", r.slice_id, r.roi_label, f.name, f.class, num(f.value)).unwrap();
            }
        }
        files.push(write(dir, &format!("features_{image}.csv"), &s)?);
    }
    let mut order = String::from("index,feature_name,feature_class\n");
    for (i, (name, class)) in config.radiomics.feature_layout().iter().enumerate() {
        writeln!(order, "{i},{name},{class}").unwrap();
    }
    files.push(write(dir, FEATURE_ORDER, &order)?);
    Ok(files)
}

/// Report plus feature CSVs, as written by `run-all`.
pub fn write_bundle(manifest: &RunManifest, rois: &[RoiFeatures], config: &EvalConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = write_report(manifest, dir)?;
    files.extend(write_features(rois, config, dir)?);
    Ok(files)
}
