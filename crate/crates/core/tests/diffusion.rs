use glca_core::conditions::{ConditionSources, ImageKind, Modality};
use glca_core::diffusion::{
    cfm_loss, denoiser_forward, denoiser_graph, flow_pair, guided_velocity, init_denoiser, masked_mse, sample,
    DenoiserConfig, DiffusionTrainer, FlowExample, MaskMode, TrainOptions, PLACEHOLDER, POINT_FREQS,
};
use glca_core::nn::point_features;
use glca_core::template::{make_template, QueryPointSet};
use glca_core::wardrobe::{CoverageClass, Labels};
use glca_numerics::{Graph, ParamStore, SeedStream, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> DenoiserConfig {
    DenoiserConfig {
        channels: 16,
        heads: 2,
        mlp_ratio: 2.0,
        batch: 2,
        ..DenoiserConfig::micro()
    }
}

fn fixture(n: usize) -> (QueryPointSet, ConditionSources) {
    let t = make_template(n, 4).unwrap();
    let labels = Labels::new([1, 2, 3, 4, 5], CoverageClass::FrontalOnly).unwrap();
    let c = ConditionSources::new(&labels, &t).unwrap();
    (t, c)
}

/// Replaces every parameter with small random values so no path is inert.
fn randomized(params: &ParamStore, seed: u64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ParamStore::new();
    for (name, t) in params.iter() {
        out.insert(name, Tensor::randn(t.shape(), 0.3, &mut rng));
    }
    out
}

#[test]
fn masked_rows_never_move_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for trial in 0..100 {
        let n = rng.random_range(2..40);
        let d = rng.random_range(1..9);
        let mask: Vec<bool> = (0..n).map(|i| i == 0 || rng.random_bool(0.6)).collect();
        let pred = Tensor::randn(&[n, d], 1.0, &mut rng);
        let target = Tensor::randn(&[n, d], 1.0, &mut rng);
        let mut p2 = pred.clone();
        let mut t2 = target.clone();
        for i in (0..n).filter(|&i| !mask[i]) {
            for v in p2.row_mut(i) {
                *v += rng.random_range(-1e3..1e3);
            }
            for v in t2.row_mut(i) {
                *v = rng.random_range(-1e3..1e3);
            }
        }
        let eval = |a: &Tensor, b: &Tensor| {
            let mut g = Graph::new();
            let x = g.constant(a.clone());
            let y = g.constant(b.clone());
            let l = masked_mse(&mut g, x, y, &mask).unwrap().unwrap();
            g.value(l).item().unwrap()
        };
        let base = eval(&pred, &target);
        assert_eq!(base.to_bits(), eval(&p2, &t2).to_bits(), "trial {trial}");
    }
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[3, 2]));
    assert!(masked_mse(&mut g, x, x, &[false; 3]).unwrap().is_none());
}

#[test]
fn perfect_prediction_has_zero_loss() {
    let mut g = Graph::new();
    let z0 = g.constant(Tensor::randn(&[5, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(1)));
    let z1 = g.constant(Tensor::randn(&[5, 3], 1.0, &mut ChaCha8Rng::seed_from_u64(2)));
    let (_, u) = flow_pair(&mut g, z0, z1, 0.3, 1e-5).unwrap();
    let l = masked_mse(&mut g, u, u, &[true, false, true, true, false]).unwrap().unwrap();
    assert_eq!(g.value(l).item().unwrap(), 0.0);
}

#[test]
fn output_shape_and_null_condition() {
    let cfg = tiny();
    let (t, c) = fixture(24);
    let params = randomized(&init_denoiser(&cfg, 0).unwrap(), 3);
    let z = Tensor::randn(&[24, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    for m in Modality::ALL {
        for k in [ImageKind::Scribble, ImageKind::BodyParts] {
            let b = c.bundle(m, k);
            let v = denoiser_forward(&params, &cfg, &z, 0.4, &t.coords(), &b).unwrap();
            assert_eq!(v.shape(), &[24, 8]);
            let null = b.null();
            let vn = denoiser_forward(&params, &cfg, &z, 0.4, &t.coords(), &null).unwrap();
            assert!(vn.is_finite());
            for s in [0.0, 1.0, 5.0] {
                let g = guided_velocity(&params, &cfg, &z, 0.4, &t.coords(), &null, s).unwrap();
                assert_eq!(g, vn);
            }
        }
    }
    assert!(denoiser_forward(&params, &cfg, &Tensor::zeros(&[24, 7]), 0.1, &t.coords(), &c.bundle(Modality::TextOnly, ImageKind::Scribble)).is_err());
    assert!(denoiser_forward(&params, &cfg, &Tensor::zeros(&[23, 8]), 0.1, &t.coords(), &c.bundle(Modality::TextOnly, ImageKind::Scribble)).is_err());
}

#[test]
fn unit_guidance_is_the_conditional_trajectory() {
    let cfg = tiny();
    let (t, c) = fixture(16);
    let params = randomized(&init_denoiser(&cfg, 0).unwrap(), 4);
    let bundle = c.bundle(Modality::TextPlusImage, ImageKind::BodyParts);
    let coords = t.coords();
    let seed = SeedStream::new(77);
    let guided = sample(&params, &cfg, &coords, &bundle, 1.0, 6, seed).unwrap();
    let mut z = Tensor::randn(&[16, 8], 1.0, &mut seed.derive("z0").rng());
    let dt = 1.0 / 6.0;
    for k in 0..6 {
        let v = denoiser_forward(&params, &cfg, &z, k as f64 * dt, &coords, &bundle).unwrap();
        z = z.zip_map(&v, |a, b| a + dt * b).unwrap();
    }
    assert_eq!(guided, z);
    assert_eq!(guided, sample(&params, &cfg, &coords, &bundle, 1.0, 6, seed).unwrap());
    let strong = sample(&params, &cfg, &coords, &bundle, 5.0, 6, seed).unwrap();
    assert_ne!(strong, guided);
    assert!(sample(&params, &cfg, &coords, &bundle, 1.0, 0, seed).is_err());
}

#[test]
fn joint_permutation_permutes_velocity() {
    let cfg = tiny();
    let (t, c) = fixture(20);
    let params = randomized(&init_denoiser(&cfg, 0).unwrap(), 6);
    let bundle = c.bundle(Modality::TextPlusImage, ImageKind::Scribble);
    let z = Tensor::randn(&[20, 8], 1.0, &mut ChaCha8Rng::seed_from_u64(8));
    let v = denoiser_forward(&params, &cfg, &z, 0.7, &t.coords(), &bundle).unwrap();
    let perm: Vec<usize> = (0..20).map(|i| (i * 7 + 3) % 20).collect();
    let pt = t.permuted(&perm);
    let vp = denoiser_forward(&params, &cfg, &z.gather_rows(&perm), 0.7, &pt.coords(), &bundle).unwrap();
    let expect = v.gather_rows(&perm);
    for (a, b) in vp.data().iter().zip(expect.data()) {
        assert!((a - b).abs() < 1e-10);
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    let cfg = tiny();
    let (t, c) = fixture(10);
    let params = randomized(&init_denoiser(&cfg, 0).unwrap(), 9);
    let bundle = c.bundle(Modality::TextPlusImage, ImageKind::BodyParts);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let z0 = Tensor::randn(&[10, 8], 1.0, &mut rng);
    let z1 = Tensor::randn(&[10, 8], 1.0, &mut rng);
    let mask: Vec<bool> = (0..10).map(|i| i % 3 != 1).collect();
    let coords = t.coords();
    let tt = 0.35;

    let mut g = Graph::new();
    let p = g.bind(&params, &[]);
    let a = g.constant(z0.clone());
    let b = g.constant(z1.clone());
    let (zt, u) = flow_pair(&mut g, a, b, tt, cfg.sigma_min).unwrap();
    let pts = g.constant(point_features(&coords, POINT_FREQS));
    let v = denoiser_graph(&mut g, &p, &cfg, zt, tt, pts, &bundle).unwrap();
    let loss = masked_mse(&mut g, v, u, &mask).unwrap().unwrap();
    let grads = g.backward(loss).unwrap().collect(&p);

    let h = 1e-5;
    let mut checked = 0;
    for (name, tensor) in params.iter() {
        if name == PLACEHOLDER || name.starts_with("scr.") {
            continue;
        }
        let analytic = &grads[name];
        let picks: Vec<usize> = (0..3).map(|_| rng.random_range(0..tensor.len())).collect();
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for &i in &picks {
            let mut probe = params.clone();
            probe.get_mut(name).unwrap().data_mut()[i] += h;
            let plus = cfm_loss(&probe, &cfg, &z0, &z1, tt, &mask, &coords, &bundle).unwrap().unwrap();
            probe.get_mut(name).unwrap().data_mut()[i] -= 2.0 * h;
            let minus = cfm_loss(&probe, &cfg, &z0, &z1, tt, &mask, &coords, &bundle).unwrap().unwrap();
            an.push(analytic.data()[i]);
            nu.push((plus - minus) / (2.0 * h));
        }
        let diff: f64 = an.iter().zip(&nu).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let scale = an.iter().map(|x| x * x).sum::<f64>().sqrt().max(nu.iter().map(|x| x * x).sum::<f64>().sqrt());
        let rel = if scale < 1e-9 { diff } else { diff / scale };
        assert!(rel < 1e-3, "{name}: rel err {rel}, analytic {an:?}, numeric {nu:?}");
        checked += 1;
    }
    assert!(checked > 20);
}

fn toy_data(t: &QueryPointSet, count: usize, invalid_rows: bool) -> Vec<FlowExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    (0..count)
        .map(|i| {
            let labels = Labels::new([(i % 5) as u8, 0, (i % 8) as u8, 1, 2], CoverageClass::FullTurn).unwrap();
            FlowExample {
                latents: Tensor::randn(&[t.len(), 8], 0.5, &mut rng),
                mask: (0..t.len()).map(|r| !invalid_rows || r % 4 != 0).collect(),
                conditions: ConditionSources::new(&labels, t).unwrap(),
            }
        })
        .collect()
}

#[test]
fn training_smoke_and_placeholder_updates() {
    let (t, _) = fixture(16);
    let data = toy_data(&t, 6, true);
    let mut cfg = tiny();
    cfg.warmup_steps = 10;
    cfg.lr = 3e-3;
    let coords = t.coords();
    let mut tr = DiffusionTrainer::new(cfg.clone(), TrainOptions::default(), 1).unwrap();
    let init = tr.placeholder().to_vec();
    let mut losses = Vec::new();
    for _ in 0..100 {
        losses.push(tr.train_step(&data, &coords).unwrap().loss);
    }
    let head: f64 = losses[..20].iter().sum::<f64>() / 20.0;
    let tail: f64 = losses[80..].iter().sum::<f64>() / 20.0;
    assert!(tail < head, "{head} -> {tail}");
    assert_ne!(tr.placeholder(), init.as_slice());

    let frozen = TrainOptions {
        mask: MaskMode::Visibility,
        freeze_placeholder: true,
    };
    let mut tz = DiffusionTrainer::new(cfg.clone(), frozen, 1).unwrap();
    for _ in 0..20 {
        tz.train_step(&data, &coords).unwrap();
    }
    assert!(tz.placeholder().iter().all(|v| v.to_bits() == 0));
}

#[test]
fn training_is_deterministic() {
    let (t, _) = fixture(12);
    let data = toy_data(&t, 3, true);
    let run = || {
        let mut tr = DiffusionTrainer::new(tiny(), TrainOptions::default(), 5).unwrap();
        for _ in 0..5 {
            tr.train_step(&data, &t.coords()).unwrap();
        }
        tr
    };
    assert_eq!(run(), run());
}

#[test]
fn full_dropout_feeds_zero_condition_tokens() {
    let (t, _) = fixture(12);
    let data = toy_data(&t, 3, false);
    let mut cfg = tiny();
    cfg.cfg_drop = 1.0;
    let mut tr = DiffusionTrainer::new(cfg.clone(), TrainOptions::default(), 2).unwrap();
    let before = tr.params.clone();
    for _ in 0..10 {
        let s = tr.train_step(&data, &t.coords()).unwrap();
        assert_eq!(s.dropped, cfg.batch);
    }
    for proj in ["txt.in.w", "scr.in.w", "prt.in.w"] {
        assert_eq!(tr.params.get(proj).unwrap(), before.get(proj).unwrap(), "{proj}");
    }
    assert_ne!(tr.params.get("lat.in.w").unwrap(), before.get("lat.in.w").unwrap());
}

#[test]
fn library_gradient_check_covers_the_reachable_parameters() {
    let (t, c) = fixture(8);
    let bundle = c.bundle(Modality::TextPlusImage, ImageKind::Scribble);
    let report = glca_core::diffusion::loss_gradient_check(&tiny(), &t.coords(), &bundle, 2, 1e-5, SeedStream::new(2)).unwrap();
    assert!(report.iter().all(|(name, _)| !name.starts_with("prt.") && name != PLACEHOLDER));
    assert!(report.iter().any(|(name, _)| name.starts_with("scr.")));
    for (name, rel) in &report {
        assert!(*rel < 1e-3, "{name}: {rel}");
    }
}
