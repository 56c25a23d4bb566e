//! Experiment configuration, read from and echoed to TOML.

use std::fs;
use std::path::{Path, PathBuf};

use ctharm_core::codec::CodecConfig;
use ctharm_core::diffusion::{DenoiserConfig, DiffusionConfig};
use ctharm_core::eval::EvalConfig;
use ctharm_core::phantom::{KernelProfile, PhantomSpec, SplitPlan};
use ctharm_core::rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::sha256_hex;
use crate::{Error, Result};

/// Tags mixing the master seed into the seed of each stage.
mod seed_tags {
    pub const DATA: u64 = 0x6461_7461;
    pub const CODEC: u64 = 0x636f_6463;
    pub const DENOISER: u64 = 0x646e_6f69;
    pub const DIFFUSION: u64 = 0x6466_7573;
    pub const SAMPLER: u64 = 0x736d_706c;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub train: SplitPlan,
    pub test: SplitPlan,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train: SplitPlan::train(200),
            test: SplitPlan::test(20),
        }
    }
}

/// Everything one run depends on.
///
/// `seed` is the only seed that matters: [`ExperimentConfig::resolved`]
/// overwrites the per-stage seeds with values derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub phantom: PhantomSpec,
    /// Kernel of the non-standard images.
    pub kernel_a: KernelProfile,
    /// Kernel of the standard images.
    pub kernel_b: KernelProfile,
    pub codec: CodecConfig,
    pub denoiser: DenoiserConfig,
    pub diffusion: DiffusionConfig,
    pub eval: EvalConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            output_dir: PathBuf::from("run"),
            data: DataConfig::default(),
            phantom: PhantomSpec::default(),
            kernel_a: KernelProfile::smooth_default(),
            kernel_b: KernelProfile::sharp_default(),
            codec: CodecConfig::default(),
            denoiser: DenoiserConfig::default(),
            diffusion: DiffusionConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The CI profile: 2 + 2 epochs on a handful of pairs.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.data.train.n_slices = 16;
        cfg.data.test.n_slices = 4;
        cfg.codec.epochs = 2;
        cfg.diffusion.epochs = 2;
        cfg.diffusion.noise_draws = 4;
        cfg
    }

    pub fn from_toml(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::format(path, e.to_string()))
    }

    pub fn data_seed(&self) -> u64 {
        rng::mix(self.seed, seed_tags::DATA)
    }

    /// A copy with stage seeds derived from `seed`, checked for
    /// consistency between stages.
    pub fn resolved(&self) -> Result<Self> {
        let mut c = self.clone();
        c.codec.seed = rng::mix(c.seed, seed_tags::CODEC);
        c.denoiser.seed = rng::mix(c.seed, seed_tags::DENOISER);
        c.diffusion.seed = rng::mix(c.seed, seed_tags::DIFFUSION);
        c.eval.seed = rng::mix(c.seed, seed_tags::SAMPLER);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        self.phantom.validate()?;
        self.kernel_a.validate()?;
        self.kernel_b.validate()?;
        self.codec.validate()?;
        self.denoiser.validate()?;
        self.diffusion.validate()?;
        self.eval.radiomics.validate()?;
        if self.codec.latent_dim != self.denoiser.latent_dim {
            return Err(Error::Validation(format!(
                "codec latent_dim {} differs from denoiser latent_dim {}",
                self.codec.latent_dim, self.denoiser.latent_dim
            )));
        }
        if self.denoiser.steps != self.diffusion.steps {
            return Err(Error::Validation(format!(
                "denoiser is configured for {} steps but diffusion uses {}",
                self.denoiser.steps, self.diffusion.steps
            )));
        }
        let dims = (self.phantom.height, self.phantom.width);
        if dims != (self.codec.image_height, self.codec.image_width) {
            return Err(Error::Validation(format!(
                "phantom is {}x{} but the codec expects {}x{}",
                dims.0, dims.1, self.codec.image_height, self.codec.image_width
            )));
        }
        if self.data.train.n_slices == 0 || self.data.test.n_slices == 0 {
            return Err(Error::Validation("both splits need at least one slice".into()));
        }
        Ok(())
    }

    /// SHA-256 of the JSON form, identifying the configuration.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }
}
