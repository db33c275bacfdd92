use glca_pipeline::dataset::cmd_dataset;
use glca_pipeline::train::{cmd_train_compressor, cmd_train_diffusion};
use glca_pipeline::{Layout, PipelineError, RunConfig};

fn with_steps(cfg: &RunConfig, compressor: u64, diffusion: u64) -> RunConfig {
    let mut c = cfg.clone();
    c.compressor.steps = compressor;
    c.diffusion.steps = diffusion;
    c
}

fn artifacts(layout: &Layout) -> Vec<Vec<u8>> {
    [
        layout.compressor(),
        layout.compressor_log(),
        layout.diffusion("full"),
        layout.diffusion_log("full"),
    ]
    .iter()
    .map(|p| std::fs::read(p).unwrap())
    .collect()
}

#[test]
fn interrupted_training_resumes_bit_identically() {
    let mut cfg = RunConfig::tiny();
    cfg.checkpoint_every = 3;

    let whole = tempfile::tempdir().unwrap();
    let a = Layout::new(whole.path());
    cmd_dataset(&cfg, &a, false).unwrap();
    cmd_train_compressor(&cfg, &a, false, |_| {}).unwrap();
    cmd_train_diffusion(&cfg, &a, false, |_| {}).unwrap();

    let split = tempfile::tempdir().unwrap();
    let b = Layout::new(split.path());
    cmd_dataset(&cfg, &b, false).unwrap();
    let first = cmd_train_compressor(&with_steps(&cfg, 5, 5), &b, false, |_| {}).unwrap();
    assert_eq!((first.start_step, first.end_step), (0, 5));
    let second = cmd_train_compressor(&cfg, &b, false, |_| {}).unwrap();
    assert_eq!((second.start_step, second.end_step), (5, 10));
    cmd_train_diffusion(&with_steps(&cfg, 10, 5), &b, false, |_| {}).unwrap();
    let resumed = cmd_train_diffusion(&cfg, &b, false, |_| {}).unwrap();
    assert_eq!(resumed.start_step, 5);

    let (x, y) = (artifacts(&a), artifacts(&b));
    for (i, (p, q)) in x.iter().zip(&y).enumerate() {
        assert!(p == q, "artifact {i} differs after resuming");
    }
    for split in glca_pipeline::Split::ALL {
        assert_eq!(std::fs::read(a.latent_shard(split, 0)).unwrap(), std::fs::read(b.latent_shard(split, 0)).unwrap());
    }
}

#[test]
fn resuming_with_another_config_is_refused() {
    let cfg = RunConfig::tiny();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    cmd_dataset(&cfg, &layout, false).unwrap();
    cmd_train_compressor(&cfg, &layout, false, |_| {}).unwrap();
    let mut other = cfg.clone();
    other.compressor.lr *= 2.0;
    other.compressor.steps = 20;
    assert!(matches!(cmd_train_compressor(&other, &layout, false, |_| {}), Err(PipelineError::Config(_))));
    let restarted = cmd_train_compressor(&other, &layout, true, |_| {}).unwrap();
    assert_eq!((restarted.start_step, restarted.end_step), (0, 20));
}

#[test]
fn a_finished_run_is_a_no_op() {
    let cfg = RunConfig::tiny();
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    cmd_dataset(&cfg, &layout, false).unwrap();
    cmd_train_compressor(&cfg, &layout, false, |_| {}).unwrap();
    let before = std::fs::read(layout.compressor()).unwrap();
    let again = cmd_train_compressor(&cfg, &layout, false, |_| {}).unwrap();
    assert_eq!((again.start_step, again.end_step), (10, 10));
    assert_eq!(std::fs::read(layout.compressor()).unwrap(), before);
}
