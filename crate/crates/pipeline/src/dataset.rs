//! Synthetic identity datasets on disk.

use std::collections::BTreeMap;

use glca_core::identity::synth_identity;
use glca_core::profile::ObservabilityProfile;
use glca_core::template::{make_template, QueryPointSet};
use glca_core::tokens::TokenCodec;
use glca_core::wardrobe::CoverageClass;
use glca_numerics::SeedStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, RunConfig};
use crate::error::{io_err, PipelineError, Result};
use crate::layout::{Layout, Split};
use crate::shard::{write_atomic, Record, Shard};

/// Template and token codec shared by every identity of a run.
#[derive(Clone, Debug)]
pub struct World {
    pub template: QueryPointSet,
    pub codec: TokenCodec,
}

impl World {
    pub fn new(cfg: &DatasetConfig) -> Result<Self> {
        Ok(Self {
            template: make_template(cfg.points, cfg.template_seed)?,
            codec: TokenCodec::new(cfg.token_dim, cfg.codec_seed)?,
        })
    }

    pub fn profile(&self, class: CoverageClass) -> ObservabilityProfile {
        ObservabilityProfile::for_class(class, self.template.rig.skeleton().len())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub name: String,
    pub count: usize,
    pub shards: Vec<String>,
    /// Identities per coverage class name.
    pub classes: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub splits: Vec<SplitManifest>,
    pub config: RunConfig,
}

impl Manifest {
    pub fn split(&self, split: Split) -> Option<&SplitManifest> {
        self.splits.iter().find(|s| s.name == split.name())
    }
}

fn style_seed(run_seed: u64, split: Split, index: usize) -> u64 {
    SeedStream::new(run_seed)
        .derive("dataset")
        .derive(split.name())
        .index(index as u64)
        .seed()
}

/// Generates one split's identities in parallel; the result depends only on
/// the config.
pub fn build_split(cfg: &RunConfig, world: &World, split: Split) -> Result<Vec<Record>> {
    let count = match split {
        Split::Train => cfg.dataset.train,
        Split::Test => cfg.dataset.test,
    };
    let classes = cfg.effective_mix().assign(count);
    classes
        .par_iter()
        .enumerate()
        .map(|(i, &class)| {
            let id = synth_identity(&world.template, &world.codec, style_seed(cfg.seed, split, i), &world.profile(class))?;
            Ok(Record {
                id: format!("{}-{i:05}", split.name()),
                matrix: id.tokens,
                mask: id.mask,
                labels: id.labels,
            })
        })
        .collect()
}

/// Writes shards, the manifest, and the config echo. Refuses to replace an
/// existing manifest unless `force` is set.
pub fn cmd_dataset(cfg: &RunConfig, layout: &Layout, force: bool) -> Result<Manifest> {
    cfg.validate()?;
    if layout.manifest().exists() && !force {
        return Err(PipelineError::Exists(layout.manifest()));
    }
    std::fs::create_dir_all(&layout.root).map_err(io_err(&layout.root))?;
    let world = World::new(&cfg.dataset)?;
    let mut splits = Vec::new();
    for split in Split::ALL {
        let records = build_split(cfg, &world, split)?;
        let mut classes = BTreeMap::new();
        for c in CoverageClass::ALL {
            classes.insert(c.name().to_string(), records.iter().filter(|r| r.labels.coverage == c).count());
        }
        let mut shards = Vec::new();
        for (k, chunk) in records.chunks(cfg.dataset.per_shard).enumerate() {
            let path = layout.shard(split, k);
            Shard {
                n: cfg.dataset.points,
                width: cfg.dataset.token_dim,
                stats: None,
                records: chunk.to_vec(),
            }
            .write(&path)?;
            shards.push(path.file_name().expect("shard file name").to_string_lossy().into_owned());
        }
        splits.push(SplitManifest {
            name: split.name().to_string(),
            count: records.len(),
            shards,
            classes,
        });
    }
    let manifest = Manifest {
        seed: cfg.seed,
        splits,
        config: cfg.clone(),
    };
    write_atomic(&layout.config(), cfg.to_json().as_bytes())?;
    write_atomic(&layout.manifest(), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

pub fn load_manifest(layout: &Layout) -> Result<Manifest> {
    let path = layout.manifest();
    if !path.exists() {
        return Err(PipelineError::MissingStage {
            stage: "dataset",
            what: "dataset manifest",
            path,
        });
    }
    let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok(serde_json::from_str(&text)?)
}

/// Every record of a split, in identity order.
pub fn load_split(layout: &Layout, split: Split) -> Result<Vec<Record>> {
    let manifest = load_manifest(layout)?;
    let entry = manifest
        .split(split)
        .ok_or_else(|| PipelineError::Config(format!("manifest has no {} split", split.name())))?;
    let mut out = Vec::with_capacity(entry.count);
    for k in 0..entry.shards.len() {
        out.extend(Shard::read(&layout.shard(split, k))?.records);
    }
    Ok(out)
}
