//! Mask statistics, reconstruction error, and sampler metrics of a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use glca_core::compressor::{decode, encode, masked_l1};
use glca_core::conditions::{ConditionSources, ImageKind, Modality};
use glca_core::detok::Detokenizer;
use glca_core::template::{QueryPointSet, Region};
use glca_core::tokens::{splats_from_appearance, Appearance, BASE_LOG_SCALE, BASE_OPACITY_LOGIT};
use glca_core::visibility::{identity_mask, identity_oracle_mask, Tau, K_MIN};
use glca_core::wardrobe::CoverageClass;
use glca_numerics::SeedStream;
use glca_splat::{rasterize, BodyPose, Image};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::dataset::{load_split, World};
use crate::error::Result;
use crate::generate::{view_camera, Models};
use crate::layout::{Layout, Split};
use crate::shard::{write_atomic, Record};
use crate::train::load_compressor;

/// Per-identity row of the mask report.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskRow {
    pub id: String,
    pub valid_fraction: f64,
    pub class: CoverageClass,
}

pub fn mask_rows(records: &[Record]) -> Vec<MaskRow> {
    records
        .iter()
        .map(|r| MaskRow {
            id: r.id.clone(),
            valid_fraction: r.mask.iter().filter(|m| **m).count() as f64 / r.mask.len() as f64,
            class: r.labels.coverage,
        })
        .collect()
}

/// Writes `identity_id,valid_fraction,coverage_class` for every identity of
/// `split`.
pub fn cmd_eval_mask(layout: &Layout, split: Split) -> Result<Vec<MaskRow>> {
    let rows = mask_rows(&load_split(layout, split)?);
    let mut csv = String::from("identity_id,valid_fraction,coverage_class\n");
    for r in &rows {
        writeln!(csv, "{},{},{}", r.id, r.valid_fraction, r.class.name()).expect("string write");
    }
    write_atomic(&layout.eval_mask(split), csv.as_bytes())?;
    Ok(rows)
}

/// One line of the metrics CSV. `variant` is `data`, `compressor`, or a
/// denoiser ablation tag; `class` a coverage class name or `all`.
#[derive(Clone, Debug, PartialEq)]
pub struct Metric {
    pub variant: String,
    pub metric: String,
    pub class: String,
    pub value: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    /// Test identities checked against the brute-force mask oracle.
    pub oracle_identities: usize,
    /// Test identities sampled per denoiser variant.
    pub sample_identities: usize,
    /// Denoiser variants to sample; all present checkpoints when empty.
    pub variants: Vec<String>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            oracle_identities: usize::MAX,
            sample_identities: usize::MAX,
            variants: Vec::new(),
        }
    }
}

/// Pools `(class, value)` pairs into per-class and overall means.
fn summarize(variant: &str, metric: &str, values: &[(CoverageClass, f64)]) -> Vec<Metric> {
    let mut out = Vec::new();
    let mut groups: Vec<(String, Vec<f64>)> = CoverageClass::ALL
        .iter()
        .map(|c| (c.name().to_string(), values.iter().filter(|(k, _)| k == c).map(|(_, v)| *v).collect()))
        .collect();
    groups.push(("all".into(), values.iter().map(|(_, v)| *v).collect()));
    for (class, vals) in groups {
        if vals.is_empty() {
            continue;
        }
        out.push(Metric {
            variant: variant.into(),
            metric: metric.into(),
            class,
            value: vals.iter().sum::<f64>() / vals.len() as f64,
            count: vals.len(),
        });
    }
    out
}

/// Pixels the template's lower body (pants and shoes) covers in a frontal
/// rest-pose render.
pub fn lower_body_pixels(template: &QueryPointSet, side: usize) -> Result<Vec<(usize, usize)>> {
    let appearance: Vec<Appearance> = template
        .regions
        .iter()
        .map(|&r| Appearance {
            rgb: [0.5; 3],
            opacity_logit: if matches!(r, Region::Lower | Region::Shoes) {
                BASE_OPACITY_LOGIT + 0.5
            } else {
                -30.0
            },
            log_scale: BASE_LOG_SCALE,
            offset: 0.0,
        })
        .collect();
    let splats = splats_from_appearance(template, &appearance)?;
    let img = rasterize(&splats, &view_camera(0.0, side)?).image;
    Ok((0..side)
        .flat_map(|y| (0..side).map(move |x| (x, y)))
        .filter(|&(x, y)| img.alpha(x, y) > 0.5)
        .collect())
}

pub fn mean_alpha(img: &Image, pixels: &[(usize, usize)]) -> f64 {
    pixels.iter().map(|&(x, y)| img.alpha(x, y)).sum::<f64>() / pixels.len().max(1) as f64
}

fn rgb_distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    a.iter().zip(&b).map(|(x, y)| (x.clamp(0.0, 1.0) - y).powi(2)).sum::<f64>().sqrt()
}

/// Sampler metrics for one generated identity.
struct SampleScores {
    class: CoverageClass,
    lower_alpha: f64,
    /// Mean palette distance over invalid rows, if any.
    invalid_error: Option<f64>,
    valid_error: Option<f64>,
    palette_hits: f64,
}

fn score_sample(models: &Models, record: &Record, tokens: &glca_numerics::Tensor, pixels: &[(usize, usize)], side: usize) -> Result<SampleScores> {
    let template = &models.world.template;
    let app = models.detok.appearance(tokens)?;
    let n_joints = template.rig.skeleton().len();
    let img = models.render(tokens, &BodyPose::identity(n_joints), &view_camera(0.0, side)?)?;
    let mut inv = Vec::new();
    let mut val = Vec::new();
    let mut sums: BTreeMap<usize, ([f64; 3], usize)> = BTreeMap::new();
    for (i, a) in app.iter().enumerate() {
        let region = template.regions[i];
        let d = rgb_distance(a.rgb, record.labels.region_color(region));
        if record.mask[i] { val.push(d) } else { inv.push(d) }
        let e = sums.entry(region.index()).or_insert(([0.0; 3], 0));
        for k in 0..3 {
            e.0[k] += a.rgb[k].clamp(0.0, 1.0);
        }
        e.1 += 1;
    }
    let mut hits = 0usize;
    for region in Region::ALL {
        let Some((sum, count)) = sums.get(&region.index()) else { continue };
        let mean = sum.map(|s| s / *count as f64);
        let (table, chosen) = record.labels.region_choice(region);
        let nearest = (0..table.len())
            .min_by(|&a, &b| rgb_distance(mean, table[a].rgb).total_cmp(&rgb_distance(mean, table[b].rgb)))
            .expect("non-empty table");
        hits += (nearest == chosen as usize) as usize;
    }
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    Ok(SampleScores {
        class: record.labels.coverage,
        lower_alpha: mean_alpha(&img, pixels),
        invalid_error: mean(&inv),
        valid_error: mean(&val),
        palette_hits: hits as f64 / sums.len() as f64,
    })
}

/// Denoiser variants with a checkpoint in the run directory.
pub fn present_variants(layout: &Layout) -> Vec<String> {
    let mut tags: Vec<String> = std::fs::read_dir(&layout.root)
        .into_iter()
        .flatten()
        .flatten()
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            name.strip_prefix("diffusion-")?.strip_suffix(".ckpt").map(str::to_string)
        })
        .collect();
    tags.sort();
    tags
}

/// Evaluates every available stage on the test split, appends ablation
/// deltas against the `full` variant, and writes `eval.csv`.
pub fn cmd_eval(cfg: &RunConfig, layout: &Layout, opts: &EvalOptions) -> Result<Vec<Metric>> {
    let world = World::new(&cfg.dataset)?;
    let coords = world.template.coords();
    let test = load_split(layout, Split::Test)?;
    let mut metrics = Vec::new();

    let valid: Vec<(CoverageClass, f64)> = mask_rows(&test).iter().map(|r| (r.class, r.valid_fraction)).collect();
    metrics.extend(summarize("data", "valid_fraction", &valid));
    let detok = Detokenizer::Analytic(world.codec.clone());
    let agree: Vec<(CoverageClass, f64)> = test
        .par_iter()
        .take(opts.oracle_identities)
        .map(|r| {
            let prof = world.profile(r.labels.coverage);
            let fast = identity_mask(&r.matrix, &detok, &world.template, &prof, Tau::default(), K_MIN)?;
            let slow = identity_oracle_mask(&r.matrix, &detok, &world.template, &prof, Tau::default(), K_MIN)?;
            Ok((r.labels.coverage, (fast == slow) as u8 as f64))
        })
        .collect::<Result<_>>()?;
    metrics.extend(summarize("data", "mask_agreement", &agree));

    if layout.compressor().exists() {
        let model = load_compressor(layout)?;
        let errs: Vec<(CoverageClass, f64)> = test
            .par_iter()
            .filter(|r| r.mask.iter().any(|m| *m))
            .map(|r| {
                let x = model.token_stats.standardize(&r.matrix)?;
                let z = encode(&model.params, &model.config, &x, &coords)?;
                let y = decode(&model.params, &model.config, &z.mean, &coords)?;
                Ok((r.labels.coverage, masked_l1(&y, &x, &r.mask)?))
            })
            .collect::<Result<_>>()?;
        metrics.extend(summarize("compressor", "masked_l1", &errs));
    }

    let variants = if opts.variants.is_empty() {
        present_variants(layout)
    } else {
        opts.variants.clone()
    };
    let side = cfg.sample.image_size;
    let pixels = lower_body_pixels(&world.template, side)?;
    let picked: Vec<(usize, &Record)> = test.iter().enumerate().take(opts.sample_identities).collect();
    let sources: Vec<ConditionSources> = picked
        .par_iter()
        .map(|(_, r)| Ok(ConditionSources::new(&r.labels, &world.template)?))
        .collect::<Result<_>>()?;
    for tag in &variants {
        let models = Models::load(cfg, layout, tag)?;
        let scores: Vec<SampleScores> = picked
            .par_iter()
            .zip(&sources)
            .map(|(&(i, r), src)| {
                let bundle = src.bundle(Modality::TextOnly, ImageKind::Scribble);
                let seed = SeedStream::new(cfg.seed).derive("eval").index(i as u64);
                let (_, tokens) = models.generate(&bundle, cfg.sample.cfg_scale, cfg.sample.steps, seed)?;
                score_sample(&models, r, &tokens, &pixels, side)
            })
            .collect::<Result<_>>()?;
        let col = |f: &dyn Fn(&SampleScores) -> Option<f64>| -> Vec<(CoverageClass, f64)> {
            scores.iter().filter_map(|s| f(s).map(|v| (s.class, v))).collect()
        };
        metrics.extend(summarize(tag, "lower_body_alpha", &col(&|s| Some(s.lower_alpha))));
        metrics.extend(summarize(tag, "invalid_palette_error", &col(&|s| s.invalid_error)));
        metrics.extend(summarize(tag, "valid_palette_error", &col(&|s| s.valid_error)));
        metrics.extend(summarize(tag, "palette_accuracy", &col(&|s| Some(s.palette_hits))));
    }
    metrics.extend(deltas(&metrics));
    write_atomic(&layout.eval(), metrics_csv(&metrics).as_bytes())?;
    Ok(metrics)
}

/// `variant − full` for every sampler metric of every other variant.
pub fn deltas(metrics: &[Metric]) -> Vec<Metric> {
    let mut out = Vec::new();
    for m in metrics.iter().filter(|m| !matches!(m.variant.as_str(), "full" | "data" | "compressor")) {
        if let Some(base) = metrics.iter().find(|b| b.variant == "full" && b.metric == m.metric && b.class == m.class) {
            out.push(Metric {
                variant: m.variant.clone(),
                metric: format!("delta_{}", m.metric),
                class: m.class.clone(),
                value: m.value - base.value,
                count: m.count,
            });
        }
    }
    out
}

pub fn metrics_csv(metrics: &[Metric]) -> String {
    let mut csv = String::from("variant,metric,coverage_class,value,count\n");
    for m in metrics {
        writeln!(csv, "{},{},{},{},{}", m.variant, m.metric, m.class, m.value, m.count).expect("string write");
    }
    csv
}

/// Looks up one metric value.
pub fn find(metrics: &[Metric], variant: &str, metric: &str, class: &str) -> Option<f64> {
    metrics
        .iter()
        .find(|m| m.variant == variant && m.metric == metric && m.class == class)
        .map(|m| m.value)
}
