use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::pipeline::{self, Models, RunManifest};
use crate::{report, Error, Result};

#[derive(Debug, Parser)]
#[command(name = "ctharm", version, about = "CT reconstruction-kernel harmonization with latent diffusion")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; defaults to the built-in frozen run.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed, overriding the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Start from the 2 + 2 epoch smoke profile instead of the full run.
    #[arg(long, global = true)]
    pub smoke: bool,
    /// Suppress progress lines on stderr.
    #[arg(long, short, global = true)]
    pub quiet: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a paired synthetic dataset.
    Generate {
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 1: train the encoder-decoder.
    TrainCodec {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Phase 2: train the latent denoiser against a frozen codec.
    TrainDiffusion {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Standardize one image: encode, sample, decode.
    Standardize {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate all three conditions on the test split.
    Evaluate {
        #[arg(long)]
        codec: PathBuf,
        #[arg(long)]
        denoiser: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Directory for the manifest and feature CSVs.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the report bundle of a run manifest.
    Report {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Every phase in order into one run directory.
    RunAll {
        /// Run directory; defaults to the config's `output_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Common {
    pub fn experiment(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None if self.smoke => ExperimentConfig::smoke(),
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        cfg.resolved()
    }

    fn log(&self, line: &str) {
        if !self.quiet {
            eprintln!("{line}");
        }
    }
}

fn manifest_for_models(cfg: &ExperimentConfig, codec: &Path, denoiser: &Path) -> Result<RunManifest> {
    let mut m = RunManifest::new(cfg);
    let root = Path::new("");
    m.add_artifact(root, "codec", &std::path::absolute(codec).map_err(|e| Error::io(codec, e))?)?;
    m.add_artifact(root, "denoiser", &std::path::absolute(denoiser).map_err(|e| Error::io(denoiser, e))?)?;
    Ok(m)
}

pub fn run(cli: &Cli) -> Result<()> {
    let c = &cli.common;
    match &cli.command {
        Command::Generate { out } => {
            let cfg = c.experiment()?;
            let m = pipeline::generate(&cfg, out)?;
            c.log(&format!("wrote {} pairs to {}", m.pairs.len(), out.display()));
        }
        Command::TrainCodec { data, out } => {
            let cfg = c.experiment()?;
            let p = pipeline::run_phase1(&cfg, data, out, |r| {
                c.log(&format!("codec epoch {} loss {:.6}", r.epoch + 1, r.mean_loss))
            })?;
            c.log(&format!("wrote {} (sha256 {}) in {:.1} s", out.display(), p.sha256, p.seconds));
        }
        Command::TrainDiffusion { codec, data, out } => {
            let cfg = c.experiment()?;
            let p = pipeline::run_phase2(&cfg, data, codec, out, |r| {
                c.log(&format!("diffusion epoch {} loss {:.6}", r.epoch + 1, r.mean_loss))
            })?;
            c.log(&format!(
                "wrote {} (sha256 {}) in {:.1} s; codec unchanged ({})",
                out.display(),
                p.denoiser.sha256,
                p.denoiser.seconds,
                p.codec_file_after
            ));
        }
        Command::Standardize {
            codec,
            denoiser,
            input,
            out,
        } => {
            let models = Models::load(codec, denoiser)?;
            pipeline::standardize_file(&models, input, c.seed.unwrap_or(0), out)?;
        }
        Command::Evaluate {
            codec,
            denoiser,
            data,
            out,
        } => {
            let cfg = c.experiment()?;
            let models = Models::load(codec, denoiser)?;
            let ev = pipeline::evaluate(&cfg, data, &models)?;
            let mut m = manifest_for_models(&cfg, codec, denoiser)?;
            m.timing("evaluate", ev.seconds);
            m.metrics = Some(ev.metrics);
            report::write_features(&ev.rois, &cfg.eval, out)?;
            m.save(&out.join(pipeline::RUN_MANIFEST))?;
            c.log(&format!("wrote {}", out.join(pipeline::RUN_MANIFEST).display()));
        }
        Command::Report { manifest, out } => {
            let m = RunManifest::load(manifest)?;
            for f in report::write_report(&m, out)? {
                c.log(&format!("wrote {}", f.display()));
            }
        }
        Command::RunAll { out } => {
            let cfg = c.experiment()?;
            let out = out.clone().unwrap_or_else(|| cfg.output_dir.clone());
            let m = pipeline::run_all(&cfg, &out, &mut |l| c.log(l))?;
            let summary = out.join("report").join(report::SUMMARY);
            if !c.quiet {
                if let Ok(text) = std::fs::read_to_string(&summary) {
                    eprint!("{text}");
                }
            }
            c.log(&format!("run {} complete in {}", m.run_id, out.display()));
        }
    }
    Ok(())
}
