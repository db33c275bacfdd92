use std::path::Path;

use glca_core::wardrobe::{CoverageClass, Labels};
use glca_pipeline::checkpoint::Checkpoint;
use glca_pipeline::dataset::{cmd_dataset, load_split};
use glca_pipeline::eval::{cmd_eval, cmd_eval_mask, find, EvalOptions};
use glca_pipeline::generate::{cmd_render, cmd_sample, SampleRequest};
use glca_pipeline::train::{cmd_train_compressor, cmd_train_diffusion};
use glca_pipeline::{Layout, PipelineError, RunConfig, Split};

fn read_all(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walk(dir) {
        out.push((e.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&e).unwrap()));
    }
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap().flatten() {
        let p = e.path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn trained(cfg: &RunConfig) -> (tempfile::TempDir, Layout) {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    cmd_dataset(cfg, &layout, false).unwrap();
    cmd_train_compressor(cfg, &layout, false, |_| {}).unwrap();
    cmd_train_diffusion(cfg, &layout, false, |_| {}).unwrap();
    (dir, layout)
}

#[test]
fn dataset_is_byte_identical_across_runs() {
    let mut cfg = RunConfig::tiny();
    cfg.seed = 3;
    cfg.dataset.train = 64;
    cfg.dataset.per_shard = 32;
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let m = cmd_dataset(&cfg, &Layout::new(a.path()), false).unwrap();
    cmd_dataset(&cfg, &Layout::new(b.path()), false).unwrap();
    assert_eq!(read_all(a.path()), read_all(b.path()));

    let train = m.splits.iter().find(|s| s.name == "train").unwrap();
    assert_eq!(train.count, 64);
    assert_eq!(train.shards.len(), 2);
    let counts = cfg.dataset.mix.counts(64);
    for (c, n) in CoverageClass::ALL.iter().zip(counts) {
        assert_eq!(train.classes[c.name()], n);
    }
    let records = load_split(&Layout::new(a.path()), Split::Train).unwrap();
    assert_eq!(records.len(), 64);
    assert!(records.iter().all(|r| r.matrix.shape() == [64, 64]));
}

#[test]
fn dataset_refuses_to_overwrite_without_force() {
    let cfg = RunConfig::tiny();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    cmd_dataset(&cfg, &layout, false).unwrap();
    assert!(matches!(cmd_dataset(&cfg, &layout, false), Err(PipelineError::Exists(_))));
    cmd_dataset(&cfg, &layout, true).unwrap();
}

#[test]
fn captured_only_makes_every_identity_full_turn() {
    let mut cfg = RunConfig::tiny();
    cfg.ablation.set("captured-only").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    cmd_dataset(&cfg, &layout, false).unwrap();
    for split in Split::ALL {
        let records = load_split(&layout, split).unwrap();
        assert!(records.iter().all(|r| r.labels.coverage == CoverageClass::FullTurn));
    }
}

#[test]
fn later_stages_name_the_missing_stage() {
    let cfg = RunConfig::tiny();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let err = cmd_train_compressor(&cfg, &layout, false, |_| {}).unwrap_err();
    assert!(err.to_string().contains("glca dataset"), "{err}");
    cmd_dataset(&cfg, &layout, false).unwrap();
    let err = cmd_train_diffusion(&cfg, &layout, false, |_| {}).unwrap_err();
    assert!(err.to_string().contains("glca train-compressor"), "{err}");
    cmd_train_compressor(&cfg, &layout, false, |_| {}).unwrap();
    let req = SampleRequest::new(Labels::new([0, 0, 0, 0, 0], CoverageClass::FullTurn).unwrap(), &cfg);
    let err = cmd_sample(&cfg, &layout, &req).unwrap_err();
    assert!(err.to_string().contains("glca train-diffusion"), "{err}");
}

#[test]
fn diffusion_refuses_a_dataset_built_with_another_mix() {
    let cfg = RunConfig::tiny();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    cmd_dataset(&cfg, &layout, false).unwrap();
    cmd_train_compressor(&cfg, &layout, false, |_| {}).unwrap();
    let mut other = cfg.clone();
    other.ablation.set("captured-only").unwrap();
    assert!(matches!(cmd_train_diffusion(&other, &layout, false, |_| {}), Err(PipelineError::Config(_))));
}

#[test]
fn checkpoints_survive_a_load_save_cycle() {
    let cfg = RunConfig::tiny();
    let (_dir, layout) = trained(&cfg);
    for path in [layout.compressor(), layout.diffusion("full")] {
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes, &path).unwrap().to_bytes(), bytes);
    }
}

#[test]
fn samples_and_renders_are_deterministic() {
    let cfg = RunConfig::tiny();
    let (_dir, layout) = trained(&cfg);
    let mut req = SampleRequest::from_caption(
        "a person with tan skin and black hair wearing a red top blue pants and white shoes",
        &cfg,
    )
    .unwrap();
    req.random_poses = 2;
    req.name = "one".into();
    let a = cmd_sample(&cfg, &layout, &req).unwrap();
    req.name = "two".into();
    let b = cmd_sample(&cfg, &layout, &req).unwrap();
    assert_eq!(a.pngs.len(), cfg.sample.yaws.len() + 2);
    for (x, y) in a.pngs.iter().zip(&b.pngs) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }

    let record = &load_split(&layout, Split::Test).unwrap()[0];
    let first = cmd_render(&cfg, &layout, record, 3).unwrap();
    let bytes: Vec<Vec<u8>> = first.iter().map(|p| std::fs::read(p).unwrap()).collect();
    let again = cmd_render(&cfg, &layout, record, 3).unwrap();
    for (p, b) in again.iter().zip(&bytes) {
        assert_eq!(&std::fs::read(p).unwrap(), b);
    }
}

#[test]
fn mask_report_and_eval_table() {
    let cfg = RunConfig::tiny();
    let (_dir, layout) = trained(&cfg);
    let rows = cmd_eval_mask(&layout, Split::Test).unwrap();
    let csv = std::fs::read_to_string(layout.eval_mask(Split::Test)).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "identity_id,valid_fraction,coverage_class");
    assert_eq!(lines.len(), rows.len() + 1);
    for (line, row) in lines[1..].iter().zip(&rows) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[0], row.id);
        assert_eq!(f[1].parse::<f64>().unwrap(), row.valid_fraction);
        assert!((0.0..=1.0).contains(&row.valid_fraction));
    }
    assert!(rows.iter().filter(|r| r.class == CoverageClass::FullTurn).all(|r| r.valid_fraction == 1.0));

    let opts = EvalOptions {
        oracle_identities: 2,
        sample_identities: 2,
        variants: Vec::new(),
    };
    let metrics = cmd_eval(&cfg, &layout, &opts).unwrap();
    assert_eq!(find(&metrics, "data", "mask_agreement", "all"), Some(1.0));
    assert!(find(&metrics, "compressor", "masked_l1", "all").unwrap().is_finite());
    let alpha = find(&metrics, "full", "lower_body_alpha", "all").unwrap();
    assert!((0.0..=1.0).contains(&alpha));
    let csv = std::fs::read_to_string(layout.eval()).unwrap();
    assert!(csv.starts_with("variant,metric,coverage_class,value,count\n"));
    assert_eq!(csv.lines().count(), metrics.len() + 1);
}
