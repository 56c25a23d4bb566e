//! The experiment as a sequence of file-backed phases.
//!
//! Every phase reads its inputs from disk and writes its outputs back, so
//! the verbs of the command line and `run-all` produce the same artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ctharm_core::codec::{init_codec, train_codec_observed, CodecModel, EpochReport};
use ctharm_core::diffusion::{self, train_diffusion_observed, DenoiserModel, DiffusionConfig};
use ctharm_core::eval::{
    check_compatible, metrics_from_features, pair_features, pair_seed, standardize_image, DiffusionTranslator,
    EvalConfig, MetricsBlock, RoiFeatures,
};
use ctharm_core::phantom::{make_split, PairedDataset};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, file_sha256, hex, DenoiserMeta};
use crate::config::ExperimentConfig;
use crate::dataset::{create_dir, read_dataset, write_dataset, DatasetManifest, Splits};
use crate::error::PhaseContext;
use crate::formats::{read_image, write_image};
use crate::report;
use crate::{Error, Result};

/// Caps the worker threads of the evaluation pool.
pub const THREADS_ENV: &str = "CTHARM_THREADS";

/// Generates both splits of the configured phantom at `dir`.
pub fn generate(cfg: &ExperimentConfig, dir: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let seed = cfg.data_seed();
    let split = |plan| make_split(&cfg.phantom, &cfg.kernel_a, &cfg.kernel_b, plan, seed).phase("generate");
    let splits = Splits {
        train: split(&cfg.data.train)?,
        test: split(&cfg.data.test)?,
    };
    create_dir(dir)?;
    write_dataset(dir, &splits)
}

/// Outcome of one training phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseOutput {
    pub checkpoint: PathBuf,
    pub sha256: String,
    pub seconds: f64,
    pub loss_history: Vec<f64>,
}

/// Phase 1: trains the codec on every training image.
pub fn run_phase1(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    out: &Path,
    on_epoch: impl FnMut(EpochReport),
) -> Result<PhaseOutput> {
    cfg.validate()?;
    let splits = read_dataset(data_dir)?;
    let start = Instant::now();
    let model = init_codec(&cfg.codec).phase("train-codec")?;
    let model = train_codec_observed(model, &splits.train, on_epoch).phase("train-codec")?;
    let sha256 = checkpoint::save_codec(out, &model)?;
    Ok(PhaseOutput {
        checkpoint: out.to_path_buf(),
        sha256,
        seconds: start.elapsed().as_secs_f64(),
        loss_history: model.loss_history,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase2Output {
    pub denoiser: PhaseOutput,
    /// SHA-256 of the codec file before and after training.
    pub codec_file_before: String,
    pub codec_file_after: String,
    /// Parameter checksum of the codec as loaded.
    pub codec_params: String,
}

/// Phase 2: trains the denoiser on latents of the frozen codec.
///
/// Refuses to start without a valid codec checkpoint, and fails with an
/// integrity error if the codec file changes while it runs.
pub fn run_phase2(
    cfg: &ExperimentConfig,
    data_dir: &Path,
    codec_path: &Path,
    out: &Path,
    on_epoch: impl FnMut(diffusion::EpochReport),
) -> Result<Phase2Output> {
    cfg.validate()?;
    let codec_file_before = file_sha256(codec_path).map_err(|e| match e {
        Error::Io { .. } => Error::Validation(format!(
            "phase 2 needs a phase-1 codec checkpoint; {} is missing",
            codec_path.display()
        )),
        e => e,
    })?;
    let codec = checkpoint::load_codec(codec_path)?;
    let splits = read_dataset(data_dir)?;
    let start = Instant::now();
    let model = DenoiserModel::new(&cfg.denoiser).phase("train-diffusion")?;
    let model = train_diffusion_observed(model, &codec, &splits.train, &cfg.diffusion, on_epoch)
        .phase("train-diffusion")?;
    let codec_file_after = file_sha256(codec_path)?;
    if codec_file_after != codec_file_before {
        return Err(Error::Integrity(format!(
            "codec checkpoint {} changed during diffusion training",
            codec_path.display()
        )));
    }
    let sha256 = checkpoint::save_denoiser(out, &model, &cfg.diffusion, &codec.checksum())?;
    Ok(Phase2Output {
        denoiser: PhaseOutput {
            checkpoint: out.to_path_buf(),
            sha256,
            seconds: start.elapsed().as_secs_f64(),
            loss_history: model.loss_history,
        },
        codec_file_before,
        codec_file_after,
        codec_params: hex(&codec.checksum()),
    })
}

/// Both trained models, checked to belong together.
#[derive(Debug, Clone)]
pub struct Models {
    pub codec: CodecModel,
    pub denoiser: DenoiserModel,
    pub meta: DenoiserMeta,
}

impl Models {
    pub fn load(codec_path: &Path, denoiser_path: &Path) -> Result<Self> {
        let codec = checkpoint::load_codec(codec_path)?;
        let (denoiser, meta) = checkpoint::load_denoiser(denoiser_path)?;
        if meta.codec_checksum != hex(&codec.checksum()) {
            return Err(Error::Integrity(format!(
                "denoiser {} was trained against a different codec than {}",
                denoiser_path.display(),
                codec_path.display()
            )));
        }
        Ok(Self { codec, denoiser, meta })
    }

    pub fn diffusion(&self) -> &DiffusionConfig {
        &self.meta.diffusion
    }

    pub fn translator(&self) -> Result<DiffusionTranslator<'_>> {
        let t = DiffusionTranslator {
            model: &self.denoiser,
            schedule: self.diffusion().schedule()?,
            x0_clip: self.diffusion().x0_clip,
        };
        check_compatible(&self.codec, &t)?;
        Ok(t)
    }
}

/// `decode(sample(encode(A)))` for one image file.
pub fn standardize_file(models: &Models, input: &Path, seed: u64, output: &Path) -> Result<()> {
    let image = read_image(input)?;
    let out = standardize_image(&models.codec, &models.translator()?, &image, seed).phase("standardize")?;
    write_image(output, &out)
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Validation(format!("cannot start worker threads: {e}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsBlock,
    pub rois: Vec<RoiFeatures>,
    pub seconds: f64,
}

/// Features of every test ROI under all conditions, in parallel over
/// pairs. Results are ordered by slice id whatever the thread count.
pub fn evaluate_split(testset: &PairedDataset, models: &Models, config: &EvalConfig) -> Result<Evaluation> {
    if testset.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    let start = Instant::now();
    let translator = models.translator()?;
    let per_pair = thread_pool()?.install(|| {
        testset
            .pairs
            .par_iter()
            .enumerate()
            .map(|(i, p)| pair_features(p, &models.codec, &translator, &config.radiomics, pair_seed(config.seed, i)))
            .collect::<ctharm_core::Result<Vec<_>>>()
    });
    let mut rois: Vec<RoiFeatures> = per_pair.phase("evaluate")?.into_iter().flatten().collect();
    rois.sort_by(|a, b| (&a.slice_id, a.roi_label).cmp(&(&b.slice_id, b.roi_label)));
    let metrics = metrics_from_features(&rois, testset.len(), config).phase("evaluate")?;
    Ok(Evaluation {
        metrics,
        rois,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn evaluate(cfg: &ExperimentConfig, data_dir: &Path, models: &Models) -> Result<Evaluation> {
    cfg.validate()?;
    let splits = read_dataset(data_dir)?;
    evaluate_split(&splits.test, models, &cfg.eval)
}

/// A file the manifest vouches for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    /// Relative to the manifest's directory.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTiming {
    pub phase: String,
    pub seconds: f64,
}

/// Record of one run: what went in, what came out, and the metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub seed: u64,
    pub dataset_seed: u64,
    pub config_sha256: String,
    pub artifacts: Vec<Artifact>,
    pub timings: Vec<PhaseTiming>,
    pub codec_loss_history: Vec<f64>,
    pub diffusion_loss_history: Vec<f64>,
    /// Codec file checksum before and after phase 2.
    pub frozen_codec: Option<(String, String)>,
    pub metrics: Option<MetricsBlock>,
}

pub const RUN_MANIFEST: &str = "manifest.json";

impl RunManifest {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        let config_sha256 = cfg.hash();
        Self {
            run_id: format!("seed{}-{}", cfg.seed, &config_sha256[..12]),
            seed: cfg.seed,
            dataset_seed: cfg.data_seed(),
            config_sha256,
            artifacts: Vec::new(),
            timings: Vec::new(),
            codec_loss_history: Vec::new(),
            diffusion_loss_history: Vec::new(),
            frozen_codec: None,
            metrics: None,
        }
    }

    /// Records `path` (under `root`) with its current checksum.
    pub fn add_artifact(&mut self, root: &Path, role: &str, path: &Path) -> Result<()> {
        let rel = path.strip_prefix(root).unwrap_or(path).to_path_buf();
        self.artifacts.retain(|a| a.role != role);
        self.artifacts.push(Artifact {
            role: role.into(),
            sha256: file_sha256(path)?,
            path: rel,
        });
        Ok(())
    }

    pub fn artifact(&self, role: &str) -> Option<&Artifact> {
        self.artifacts.iter().find(|a| a.role == role)
    }

    pub fn timing(&mut self, phase: &str, seconds: f64) {
        self.timings.push(PhaseTiming {
            phase: phase.into(),
            seconds,
        });
    }

    /// Checks every artifact exists under `root` with its recorded checksum.
    pub fn verify(&self, root: &Path) -> Result<()> {
        for a in &self.artifacts {
            let path = root.join(&a.path);
            if !path.is_file() {
                return Err(Error::Integrity(format!("{} artifact {} is missing", a.role, path.display())));
            }
            let actual = file_sha256(&path)?;
            if actual != a.sha256 {
                return Err(Error::Integrity(format!(
                    "{} artifact {} has checksum {actual}, manifest records {}",
                    a.role,
                    path.display(),
                    a.sha256
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
    }
}

/// Paths of a run directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn codec(&self) -> PathBuf {
        self.root.join("checkpoints").join("codec.ctck")
    }
    pub fn denoiser(&self) -> PathBuf {
        self.root.join("checkpoints").join("denoiser.ctck")
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join(RUN_MANIFEST)
    }
}

/// Every phase in order: generate, train both models, evaluate, report.
///
/// `log` receives one line per epoch and phase.
pub fn run_all(cfg: &ExperimentConfig, out: &Path, log: &mut dyn FnMut(&str)) -> Result<RunManifest> {
    let cfg = cfg.resolved()?;
    let layout = RunLayout::new(out);
    create_dir(out)?;
    let config_path = layout.config();
    fs::write(&config_path, cfg.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    let mut manifest = RunManifest::new(&cfg);
    manifest.add_artifact(out, "config", &config_path)?;

    let t = Instant::now();
    let data = layout.data();
    let ds = generate(&cfg, &data)?;
    manifest.timing("generate", t.elapsed().as_secs_f64());
    manifest.add_artifact(out, "dataset-manifest", &data.join(crate::dataset::MANIFEST))?;
    log(&format!("generated {} pairs in {}", ds.pairs.len(), data.display()));

    let p1 = run_phase1(&cfg, &data, &layout.codec(), |r| {
        log(&format!("codec epoch {} loss {:.6}", r.epoch + 1, r.mean_loss))
    })?;
    manifest.timing("train-codec", p1.seconds);
    manifest.add_artifact(out, "codec", &p1.checkpoint)?;
    manifest.codec_loss_history = p1.loss_history;

    let p2 = run_phase2(&cfg, &data, &layout.codec(), &layout.denoiser(), |r| {
        log(&format!("diffusion epoch {} loss {:.6}", r.epoch + 1, r.mean_loss))
    })?;
    manifest.timing("train-diffusion", p2.denoiser.seconds);
    manifest.add_artifact(out, "denoiser", &p2.denoiser.checkpoint)?;
    manifest.diffusion_loss_history = p2.denoiser.loss_history;
    manifest.frozen_codec = Some((p2.codec_file_before, p2.codec_file_after));

    let models = Models::load(&layout.codec(), &layout.denoiser())?;
    let ev = evaluate(&cfg, &data, &models)?;
    manifest.timing("evaluate", ev.seconds);
    log(&format!("evaluated {} ROIs in {:.1} s", ev.metrics.n_rois, ev.seconds));
    manifest.metrics = Some(ev.metrics.clone());

    let t = Instant::now();
    let files = report::write_bundle(&manifest, &ev.rois, &cfg.eval, &layout.report())?;
    manifest.timing("report", t.elapsed().as_secs_f64());
    for f in &files {
        let role = format!("report/{}", f.file_name().unwrap().to_string_lossy());
        manifest.add_artifact(out, &role, f)?;
    }
    manifest.verify(out)?;
    manifest.save(&layout.manifest())?;
    Ok(manifest)
}
