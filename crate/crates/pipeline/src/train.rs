//! Compressor and denoiser training stages with checkpoint/resume.

use std::io::Write;
use std::path::Path;

use glca_core::compressor::{encode, CompressorConfig, CompressorStep, CompressorTrainer};
use glca_core::conditions::{ConditionSources, PARTS_DIM, SCRIBBLE_DIM, SCRIBBLE_GRID, TEXT_DIM};
use glca_core::diffusion::{DenoiserConfig, DiffusionStep, DiffusionTrainer, FlowExample, MaskMode, TrainOptions, PLACEHOLDER};
use glca_core::stats::ChannelStats;
use glca_numerics::{ParamStore, SeedStream, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::dataset::{load_manifest, load_split, World};
use crate::error::{io_err, PipelineError, Result};
use crate::layout::{Layout, Split};
use crate::shard::{write_atomic, Record, Shard};

/// Description of the frozen condition embedders a denoiser was trained with.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedderSpec {
    pub text: String,
    pub text_dim: usize,
    pub scribble_grid: usize,
    pub scribble_dim: usize,
    pub parts_dim: usize,
}

impl EmbedderSpec {
    pub fn current() -> Self {
        Self {
            text: "fnv1a hashed unigram+bigram".into(),
            text_dim: TEXT_DIM,
            scribble_grid: SCRIBBLE_GRID,
            scribble_dim: SCRIBBLE_DIM,
            parts_dim: PARTS_DIM,
        }
    }
}

/// A trained compressor with the token statistics it was trained under.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressorModel {
    pub config: CompressorConfig,
    pub params: ParamStore,
    pub token_stats: ChannelStats,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserModel {
    pub config: DenoiserConfig,
    /// Includes the placeholder.
    pub params: ParamStore,
    pub latent_stats: ChannelStats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSummary {
    pub start_step: u64,
    pub end_step: u64,
    pub last_loss: f64,
}

fn missing(stage: &'static str, what: &'static str, path: &Path) -> PipelineError {
    PipelineError::MissingStage {
        stage,
        what,
        path: path.to_path_buf(),
    }
}

fn derived_seed(run_seed: u64, label: &str) -> u64 {
    SeedStream::new(run_seed).derive(label).seed()
}

/// Training-log CSV. A resumed run keeps the rows before its start step so
/// the file matches an unbroken run.
struct Log {
    file: std::fs::File,
}

impl Log {
    fn open(path: &Path, header: &str, resume_at: Option<u64>) -> Result<Self> {
        let mut kept = format!("{header}\n");
        if let (Some(at), Ok(text)) = (resume_at, std::fs::read_to_string(path)) {
            for line in text.lines().skip(1) {
                let step: Option<u64> = line.split(',').next().and_then(|s| s.parse().ok());
                if step.is_some_and(|s| s < at) {
                    kept.push_str(line);
                    kept.push('\n');
                }
            }
        }
        std::fs::write(path, kept).map_err(io_err(path))?;
        let file = std::fs::OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(Self { file })
    }

    fn row(&mut self, line: String) -> Result<()> {
        writeln!(self.file, "{line}").map_err(|source| PipelineError::Io {
            path: "training log".into(),
            source,
        })
    }
}

fn standardized(records: &[Record], stats: &ChannelStats) -> Result<Vec<Tensor>> {
    records.iter().map(|r| Ok(stats.standardize(&r.matrix)?)).collect()
}

fn save_compressor(layout: &Layout, cfg: &RunConfig, trainer: &CompressorTrainer, stats: &ChannelStats) -> Result<()> {
    let mut ck = Checkpoint::default();
    ck.put_json("config", cfg);
    ck.put_params("compressor", &trainer.params);
    ck.put_json("token_stats", stats);
    ck.put_optimizer(&trainer.adam, trainer.seed, trainer.step);
    ck.write(&layout.compressor())
}

fn load_compressor_trainer(path: &Path, cfg: &RunConfig) -> Result<CompressorTrainer> {
    let ck = Checkpoint::read(path)?;
    let saved: RunConfig = ck.get_json("config", path)?;
    let resumable = CompressorConfig {
        steps: cfg.compressor.steps,
        ..saved.compressor.clone()
    };
    if resumable != cfg.compressor {
        return Err(PipelineError::Config(format!(
            "{} was trained with a different compressor config; pass --force to restart",
            path.display()
        )));
    }
    let (adam, state) = ck.get_optimizer(path)?;
    Ok(CompressorTrainer {
        config: cfg.compressor.clone(),
        seed: state.seed,
        params: ck.get_params("compressor", path)?,
        adam,
        step: state.step,
    })
}

pub fn load_compressor(layout: &Layout) -> Result<CompressorModel> {
    let path = layout.compressor();
    if !path.exists() {
        return Err(missing("train-compressor", "compressor checkpoint", &path));
    }
    let ck = Checkpoint::read(&path)?;
    let cfg: RunConfig = ck.get_json("config", &path)?;
    Ok(CompressorModel {
        config: cfg.compressor,
        params: ck.get_params("compressor", &path)?,
        token_stats: ck.get_json("token_stats", &path)?,
    })
}

/// Trains (or resumes) the compressor up to the configured step count, then
/// writes the latent cache. `force` discards an existing checkpoint.
pub fn cmd_train_compressor(
    cfg: &RunConfig,
    layout: &Layout,
    force: bool,
    mut on_step: impl FnMut(&CompressorStep),
) -> Result<TrainSummary> {
    cfg.validate()?;
    let world = World::new(&cfg.dataset)?;
    let coords = world.template.coords();
    let train = load_split(layout, Split::Train)?;
    let raw: Vec<Tensor> = train.iter().map(|r| r.matrix.clone()).collect();
    let stats = ChannelStats::fit(&raw)?;
    let data = standardized(&train, &stats)?;

    let path = layout.compressor();
    let mut trainer = if path.exists() && !force {
        load_compressor_trainer(&path, cfg)?
    } else {
        CompressorTrainer::new(cfg.compressor.clone(), derived_seed(cfg.seed, "compressor"))?
    };
    let start = trainer.step;
    let mut log = Log::open(
        &layout.compressor_log(),
        "step,loss,l1,kl,lambda2,lr",
        (start > 0).then_some(start),
    )?;
    let mut last = f64::NAN;
    while trainer.step < cfg.compressor.steps {
        let s = trainer.train_step(&data, &coords)?;
        log.row(format!("{},{},{},{},{},{}", s.step, s.loss, s.l1, s.kl, s.lambda2, s.lr))?;
        on_step(&s);
        last = s.loss;
        if trainer.step % cfg.checkpoint_every == 0 {
            save_compressor(layout, cfg, &trainer, &stats)?;
        }
    }
    save_compressor(layout, cfg, &trainer, &stats)?;
    write_latent_cache(layout, cfg)?;
    Ok(TrainSummary {
        start_step: start,
        end_step: trainer.step,
        last_loss: last,
    })
}

/// Encodes every identity to its posterior mean and writes latent shards
/// mirroring the token shards, with statistics fitted on the train split.
pub fn write_latent_cache(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    let model = load_compressor(layout)?;
    let world = World::new(&cfg.dataset)?;
    let coords = world.template.coords();
    let manifest = load_manifest(layout)?;
    let mut encoded = Vec::new();
    for split in Split::ALL {
        let records = load_split(layout, split)?;
        let latents: Vec<Tensor> = records
            .par_iter()
            .map(|r| {
                let x = model.token_stats.standardize(&r.matrix)?;
                Ok(encode(&model.params, &model.config, &x, &coords)?.mean)
            })
            .collect::<Result<_>>()?;
        encoded.push((split, records, latents));
    }
    let stats = ChannelStats::fit(&encoded[0].2)?;
    for (split, records, latents) in encoded {
        let entry = manifest.split(split).expect("manifest lists both splits");
        let mut it = records.into_iter().zip(latents);
        for k in 0..entry.shards.len() {
            let chunk: Vec<Record> = it
                .by_ref()
                .take(cfg.dataset.per_shard)
                .map(|(r, z)| Record { matrix: z, ..r })
                .collect();
            Shard {
                n: cfg.dataset.points,
                width: model.config.latent_dim,
                stats: Some(stats.clone()),
                records: chunk,
            }
            .write(&layout.latent_shard(split, k))?;
        }
    }
    Ok(())
}

/// Latent records of a split (raw posterior means) and the cache statistics.
pub fn load_latents(layout: &Layout, split: Split) -> Result<(Vec<Record>, ChannelStats)> {
    let manifest = load_manifest(layout)?;
    let entry = manifest.split(split).expect("manifest lists both splits");
    let mut records = Vec::with_capacity(entry.count);
    let mut stats = None;
    for k in 0..entry.shards.len() {
        let path = layout.latent_shard(split, k);
        if !path.exists() {
            return Err(missing("train-compressor", "latent cache", &path));
        }
        let shard = Shard::read(&path)?;
        stats = shard.stats;
        records.extend(shard.records);
    }
    let stats = stats.ok_or_else(|| PipelineError::Config("latent cache is empty".into()))?;
    Ok((records, stats))
}

pub fn train_options(cfg: &RunConfig) -> TrainOptions {
    TrainOptions {
        mask: if cfg.ablation.no_visibility_training {
            MaskMode::Ignore
        } else {
            MaskMode::Visibility
        },
        freeze_placeholder: cfg.ablation.zero_placeholder,
    }
}

fn save_diffusion(layout: &Layout, cfg: &RunConfig, trainer: &DiffusionTrainer, stats: &ChannelStats) -> Result<()> {
    let mut denoiser = trainer.params.clone();
    let mut placeholder = ParamStore::new();
    placeholder.insert(PLACEHOLDER, denoiser.remove(PLACEHOLDER).expect("placeholder present"));
    let mut ck = Checkpoint::default();
    ck.put_json("config", cfg);
    ck.put_params("denoiser", &denoiser);
    ck.put_params("placeholder", &placeholder);
    ck.put_json("cond_embedders", &EmbedderSpec::current());
    ck.put_json("latent_stats", stats);
    ck.put_optimizer(&trainer.adam, trainer.seed, trainer.step);
    ck.write(&layout.diffusion(&cfg.ablation.tag()))
}

fn read_denoiser(path: &Path) -> Result<(Checkpoint, RunConfig, ParamStore)> {
    let ck = Checkpoint::read(path)?;
    let saved: RunConfig = ck.get_json("config", path)?;
    let spec: EmbedderSpec = ck.get_json("cond_embedders", path)?;
    if spec != EmbedderSpec::current() {
        return Err(PipelineError::Config(format!(
            "{} was trained with different condition embedders",
            path.display()
        )));
    }
    let mut params = ck.get_params("denoiser", path)?;
    let ph = ck.get_params("placeholder", path)?;
    params.insert(PLACEHOLDER, ph.get(PLACEHOLDER)?.clone());
    Ok((ck, saved, params))
}

/// The denoiser of ablation variant `tag`.
pub fn load_denoiser(layout: &Layout, tag: &str) -> Result<DenoiserModel> {
    let path = layout.diffusion(tag);
    if !path.exists() {
        return Err(missing("train-diffusion", "denoiser checkpoint", &path));
    }
    let (ck, saved, params) = read_denoiser(&path)?;
    Ok(DenoiserModel {
        config: saved.diffusion,
        params,
        latent_stats: ck.get_json("latent_stats", &path)?,
    })
}

/// Condition sources of every record, computed in parallel.
pub fn condition_sources(records: &[Record], world: &World) -> Result<Vec<ConditionSources>> {
    records
        .par_iter()
        .map(|r| Ok(ConditionSources::new(&r.labels, &world.template)?))
        .collect()
}

/// Trains (or resumes) the denoiser variant selected by the config's
/// ablation flags. Needs the compressor stage's checkpoint and latent cache.
pub fn cmd_train_diffusion(
    cfg: &RunConfig,
    layout: &Layout,
    force: bool,
    mut on_step: impl FnMut(&DiffusionStep),
) -> Result<TrainSummary> {
    cfg.validate()?;
    if !layout.compressor().exists() {
        return Err(missing("train-compressor", "compressor checkpoint", &layout.compressor()));
    }
    let built = load_manifest(layout)?.config;
    if built.effective_mix() != cfg.effective_mix() {
        return Err(PipelineError::Config(
            "the dataset was generated with a different coverage mix; build the captured-only dataset in its own run directory".into(),
        ));
    }
    let world = World::new(&cfg.dataset)?;
    let coords = world.template.coords();
    let (records, stats) = load_latents(layout, Split::Train)?;
    let sources = condition_sources(&records, &world)?;
    let data: Vec<FlowExample> = records
        .iter()
        .zip(sources)
        .map(|(r, c)| {
            Ok(FlowExample {
                latents: stats.standardize(&r.matrix)?,
                mask: r.mask.clone(),
                conditions: c,
            })
        })
        .collect::<Result<_>>()?;

    let tag = cfg.ablation.tag();
    let path = layout.diffusion(&tag);
    let options = train_options(cfg);
    let mut trainer = if path.exists() && !force {
        let (ck, saved, params) = read_denoiser(&path)?;
        let resumable = DenoiserConfig {
            steps: cfg.diffusion.steps,
            ..saved.diffusion.clone()
        };
        if resumable != cfg.diffusion || saved.ablation != cfg.ablation {
            return Err(PipelineError::Config(format!(
                "{} was trained with a different config; pass --force to restart",
                path.display()
            )));
        }
        let (adam, state) = ck.get_optimizer(&path)?;
        DiffusionTrainer {
            config: cfg.diffusion.clone(),
            options,
            seed: state.seed,
            params,
            adam,
            step: state.step,
        }
    } else {
        DiffusionTrainer::new(cfg.diffusion.clone(), options, derived_seed(cfg.seed, "diffusion"))?
    };
    let start = trainer.step;
    let mut log = Log::open(&layout.diffusion_log(&tag), "step,loss,lr,used,dropped", (start > 0).then_some(start))?;
    let mut last = f64::NAN;
    while trainer.step < cfg.diffusion.steps {
        let s = trainer.train_step(&data, &coords)?;
        log.row(format!("{},{},{},{},{}", s.step, s.loss, s.lr, s.used, s.dropped))?;
        on_step(&s);
        last = s.loss;
        if trainer.step % cfg.checkpoint_every == 0 {
            save_diffusion(layout, cfg, &trainer, &stats)?;
        }
    }
    save_diffusion(layout, cfg, &trainer, &stats)?;
    Ok(TrainSummary {
        start_step: start,
        end_step: trainer.step,
        last_loss: last,
    })
}

/// Writes `cfg` as the run's config echo.
pub fn write_config(layout: &Layout, cfg: &RunConfig) -> Result<()> {
    write_atomic(&layout.config(), cfg.to_json().as_bytes())
}
