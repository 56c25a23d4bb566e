//! On-disk paired dataset: `pairs/<id>/{A.cts,B.cts,roi.msk}` plus a
//! `manifest.json` listing every id with its split.

use std::fs;
use std::path::{Path, PathBuf};

use ctharm_core::phantom::{label_mask, rois_from_label_mask, ImagePair, PairedDataset, Split};
use serde::{Deserialize, Serialize};

use crate::formats::{read_image, read_mask, write_image, write_mask};
use crate::{Error, Result};

pub const MANIFEST: &str = "manifest.json";
const FORMAT: &str = "ctharm-dataset";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub id: String,
    pub split: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    /// Pixel spacing `(row, col)` in mm, shared by every image.
    pub spacing_mm: (f64, f64),
    pub pairs: Vec<DatasetEntry>,
}

/// Both splits of a dataset directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: PairedDataset,
    pub test: PairedDataset,
}

fn pair_dir(root: &Path, id: &str) -> PathBuf {
    root.join("pairs").join(id)
}

pub(crate) fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Writes both splits under `root`, replacing any previous manifest.
pub fn write_dataset(root: &Path, splits: &Splits) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    let mut spacing = (1.0, 1.0);
    for ds in [&splits.train, &splits.test] {
        for pair in &ds.pairs {
            let dir = pair_dir(root, &pair.slice_id);
            create_dir(&dir)?;
            write_image(&dir.join("A.cts"), &pair.image_a)?;
            write_image(&dir.join("B.cts"), &pair.image_b)?;
            let (h, w) = pair.image_a.dims();
            write_mask(&dir.join("roi.msk"), &label_mask(h, w, &pair.rois))?;
            spacing = pair.image_a.spacing_mm();
            entries.push(DatasetEntry {
                id: pair.slice_id.clone(),
                split: ds.split.as_str().to_string(),
            });
        }
    }
    let manifest = DatasetManifest {
        format: FORMAT.into(),
        version: 1,
        spacing_mm: spacing,
        pairs: entries,
    };
    let path = root.join(MANIFEST);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn read_pair(root: &Path, id: &str, spacing: (f64, f64)) -> Result<ImagePair> {
    let dir = pair_dir(root, id);
    let spaced = |p: PathBuf| -> Result<_> {
        read_image(&p)?
            .with_spacing(spacing.0, spacing.1)
            .map_err(|e| Error::format(&p, e.to_string()))
    };
    let image_a = spaced(dir.join("A.cts"))?;
    let image_b = spaced(dir.join("B.cts"))?;
    if image_a.dims() != image_b.dims() {
        return Err(Error::format(&dir, "A and B have different dimensions"));
    }
    let mpath = dir.join("roi.msk");
    let labels = read_mask(&mpath)?;
    if (labels.height, labels.width) != image_a.dims() {
        return Err(Error::format(&mpath, "mask dimensions differ from the images"));
    }
    let rois = rois_from_label_mask(&labels).map_err(|e| Error::format(&mpath, e.to_string()))?;
    Ok(ImagePair {
        slice_id: id.to_string(),
        image_a,
        image_b,
        rois,
    })
}

pub fn read_manifest(root: &Path) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Validation(format!(
            "dataset directory {} does not exist; create it with `ctharm generate --out {}`",
            root.display(),
            root.display()
        )));
    }
    let path = root.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.format != FORMAT || manifest.version != 1 {
        return Err(Error::format(
            &path,
            format!("unsupported dataset format {} v{}", manifest.format, manifest.version),
        ));
    }
    Ok(manifest)
}

/// Reads both splits, in manifest order.
pub fn read_dataset(root: &Path) -> Result<Splits> {
    let manifest = read_manifest(root)?;
    let mut train = PairedDataset {
        split: Split::Train,
        pairs: Vec::new(),
    };
    let mut test = PairedDataset {
        split: Split::Test,
        pairs: Vec::new(),
    };
    for entry in &manifest.pairs {
        let pair = read_pair(root, &entry.id, manifest.spacing_mm)?;
        match Split::parse(&entry.split) {
            Some(Split::Train) => train.pairs.push(pair),
            Some(Split::Test) => test.pairs.push(pair),
            None => {
                return Err(Error::format(
                    root.join(MANIFEST),
                    format!("pair {} has unknown split {:?}", entry.id, entry.split),
                ))
            }
        }
    }
    Ok(Splits { train, test })
}
