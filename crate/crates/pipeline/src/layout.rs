//! File layout of a run directory.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::error::{PipelineError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Train, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(PipelineError::Config(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("dataset").join("manifest.json")
    }

    pub fn shard(&self, split: Split, index: usize) -> PathBuf {
        self.root.join("dataset").join(format!("{}-{index:03}.glca", split.name()))
    }

    pub fn latent_shard(&self, split: Split, index: usize) -> PathBuf {
        self.root.join("latents").join(format!("{}-{index:03}.glcz", split.name()))
    }

    pub fn compressor(&self) -> PathBuf {
        self.root.join("compressor.ckpt")
    }

    pub fn compressor_log(&self) -> PathBuf {
        self.root.join("compressor_log.csv")
    }

    /// Denoiser checkpoint of one ablation variant; variants share the
    /// dataset and compressor of the run.
    pub fn diffusion(&self, tag: &str) -> PathBuf {
        self.root.join(format!("diffusion-{tag}.ckpt"))
    }

    pub fn diffusion_log(&self, tag: &str) -> PathBuf {
        self.root.join(format!("diffusion-{tag}_log.csv"))
    }

    pub fn samples(&self) -> PathBuf {
        self.root.join("samples")
    }

    pub fn renders(&self) -> PathBuf {
        self.root.join("renders")
    }

    pub fn eval_mask(&self, split: Split) -> PathBuf {
        self.root.join(format!("eval_mask_{}.csv", split.name()))
    }

    pub fn eval(&self) -> PathBuf {
        self.root.join("eval.csv")
    }

    /// The explicit config if given, else the one the run was started with,
    /// else the desk defaults.
    pub fn resolve_config(&self, explicit: Option<&Path>) -> Result<RunConfig> {
        match explicit {
            Some(p) => RunConfig::load(p),
            None if self.config().exists() => RunConfig::load(&self.config()),
            None => Ok(RunConfig::desk()),
        }
    }
}
