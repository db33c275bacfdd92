//! Run configuration, stored as JSON and echoed into every artifact.

use std::path::Path;

use glca_core::compressor::CompressorConfig;
use glca_core::diffusion::DenoiserConfig;
use glca_core::wardrobe::CoverageClass;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, PipelineError, Result};

/// Fractions of full-turn, frontal-only, and upper-body-only identities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageMix {
    pub full_turn: f64,
    pub frontal_only: f64,
    pub upper_body_only: f64,
}

impl Default for CoverageMix {
    fn default() -> Self {
        Self {
            full_turn: 0.2,
            frontal_only: 0.5,
            upper_body_only: 0.3,
        }
    }
}

impl CoverageMix {
    pub fn captured_only() -> Self {
        Self {
            full_turn: 1.0,
            frontal_only: 0.0,
            upper_body_only: 0.0,
        }
    }

    fn fractions(&self) -> [f64; 3] {
        [self.full_turn, self.frontal_only, self.upper_body_only]
    }

    /// Class counts for `n` identities by largest remainder, exact whenever
    /// every fraction times `n` is an integer.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let f = self.fractions();
        let total: f64 = f.iter().sum();
        let ideal: Vec<f64> = f.iter().map(|x| x / total * n as f64).collect();
        let mut counts: [usize; 3] = std::array::from_fn(|k| (ideal[k] + 1e-9).floor() as usize);
        let mut order: Vec<usize> = (0..3).collect();
        order.sort_by(|&a, &b| {
            let ra = ideal[a] - counts[a] as f64;
            let rb = ideal[b] - counts[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = n - counts.iter().sum::<usize>();
        for k in order.into_iter().cycle() {
            if left == 0 {
                break;
            }
            counts[k] += 1;
            left -= 1;
        }
        counts
    }

    /// Class of every identity, grouped in `CoverageClass::ALL` order.
    pub fn assign(&self, n: usize) -> Vec<CoverageClass> {
        let counts = self.counts(n);
        CoverageClass::ALL
            .iter()
            .zip(counts)
            .flat_map(|(&c, k)| std::iter::repeat_n(c, k))
            .collect()
    }

    fn validate(&self) -> Result<()> {
        let f = self.fractions();
        if f.iter().any(|x| !x.is_finite() || *x < 0.0) || f.iter().sum::<f64>() <= 0.0 {
            return Err(PipelineError::Config("coverage mix needs nonnegative fractions with a positive sum".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub train: usize,
    pub test: usize,
    /// Query points on the template.
    pub points: usize,
    pub token_dim: usize,
    pub template_seed: u64,
    pub codec_seed: u64,
    pub mix: CoverageMix,
    /// Identities per shard file.
    pub per_shard: usize,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            train: 512,
            test: 64,
            points: 256,
            token_dim: 64,
            template_seed: 0,
            codec_seed: 0,
            mix: CoverageMix::default(),
            per_shard: 128,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub cfg_scale: f64,
    pub steps: usize,
    /// Side of rendered images in pixels.
    pub image_size: usize,
    /// Camera yaws in degrees for rest-pose renders.
    pub yaws: Vec<f64>,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            cfg_scale: 5.0,
            steps: 50,
            image_size: 64,
            yaws: vec![0.0, 90.0, 180.0],
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_visibility_training: bool,
    pub zero_placeholder: bool,
    pub captured_only: bool,
}

impl Ablation {
    /// Short tag naming the active flags, `full` when none are set.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.no_visibility_training {
            parts.push("no-mask");
        }
        if self.zero_placeholder {
            parts.push("zero-placeholder");
        }
        if self.captured_only {
            parts.push("captured-only");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }

    pub fn set(&mut self, name: &str) -> Result<()> {
        match name {
            "no-mask" => self.no_visibility_training = true,
            "zero-placeholder" => self.zero_placeholder = true,
            "captured-only" => self.captured_only = true,
            other => return Err(PipelineError::Config(format!("unknown ablation {other:?}"))),
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub compressor: CompressorConfig,
    pub diffusion: DenoiserConfig,
    pub sample: SampleConfig,
    #[serde(default)]
    pub ablation: Ablation,
    /// Steps between periodic checkpoints.
    pub checkpoint_every: u64,
}

impl RunConfig {
    pub fn desk() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            compressor: CompressorConfig::desk(),
            diffusion: DenoiserConfig::desk(),
            sample: SampleConfig::default(),
            ablation: Ablation::default(),
            checkpoint_every: 500,
        }
    }

    /// A few identities and a handful of steps per stage, for smoke runs.
    pub fn tiny() -> Self {
        Self {
            dataset: DatasetConfig {
                train: 12,
                test: 4,
                points: 64,
                per_shard: 8,
                ..DatasetConfig::default()
            },
            compressor: CompressorConfig {
                steps: 10,
                warmup_steps: 2,
                kl_ramp_steps: 5,
                batch: 2,
                ..CompressorConfig::desk()
            },
            diffusion: DenoiserConfig {
                steps: 10,
                warmup_steps: 2,
                batch: 2,
                ..DenoiserConfig::micro()
            },
            sample: SampleConfig {
                steps: 4,
                image_size: 24,
                ..SampleConfig::default()
            },
            checkpoint_every: 5,
            ..Self::desk()
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// The coverage mix after applying the captured-only ablation.
    pub fn effective_mix(&self) -> CoverageMix {
        if self.ablation.captured_only {
            CoverageMix::captured_only()
        } else {
            self.dataset.mix
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.train == 0 || d.test == 0 || d.per_shard == 0 {
            return Err(PipelineError::Config("dataset sizes must be positive".into()));
        }
        d.mix.validate()?;
        if self.compressor.token_dim != d.token_dim {
            return Err(PipelineError::Config(format!(
                "compressor token width {} differs from dataset token width {}",
                self.compressor.token_dim, d.token_dim
            )));
        }
        if self.compressor.latent_dim != self.diffusion.latent_dim {
            return Err(PipelineError::Config("compressor and denoiser disagree on the latent width".into()));
        }
        self.compressor.validate()?;
        self.diffusion.validate()?;
        if self.sample.steps == 0 || self.sample.image_size == 0 {
            return Err(PipelineError::Config("sampling needs at least one step and one pixel".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(PipelineError::Config("checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}
