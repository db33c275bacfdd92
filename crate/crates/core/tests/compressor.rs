use glca_core::compressor::{
    compressor_loss, decode, encode, init_compressor, masked_l1, CompressorConfig, CompressorTrainer, LatentSet,
};
use glca_core::identity::synth_identity;
use glca_core::profile::ObservabilityProfile;
use glca_core::stats::ChannelStats;
use glca_core::template::make_template;
use glca_core::tokens::TokenCodec;
use glca_core::wardrobe::CoverageClass;
use glca_numerics::{SeedStream, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> CompressorConfig {
    CompressorConfig {
        token_dim: 16,
        encoder: vec![12, 8],
        decoder: vec![12, 16],
        head_width: 4,
        ..CompressorConfig::desk()
    }
}

#[test]
fn desk_shapes_round_trip() {
    let cfg = CompressorConfig::desk();
    let t = make_template(256, 0).unwrap();
    let params = init_compressor(&cfg, 0).unwrap();
    let tokens = Tensor::randn(&[256, 64], 1.0, &mut ChaCha8Rng::seed_from_u64(1));
    let lat = encode(&params, &cfg, &tokens, &t.coords()).unwrap();
    assert_eq!(lat.mean.shape(), &[256, 8]);
    assert_eq!(lat.log_var.shape(), &[256, 8]);
    let rec = decode(&params, &cfg, &lat.mean, &t.coords()).unwrap();
    assert_eq!(rec.shape(), &[256, 64]);
    assert!(encode(&params, &cfg, &Tensor::zeros(&[256, 63]), &t.coords()).is_err());
    assert!(encode(&params, &cfg, &Tensor::zeros(&[255, 64]), &t.coords()).is_err());
    assert!(decode(&params, &cfg, &Tensor::zeros(&[256, 7]), &t.coords()).is_err());
}

#[test]
fn joint_permutation_permutes_outputs() {
    let cfg = small();
    let t = make_template(40, 2).unwrap();
    let params = init_compressor(&cfg, 3).unwrap();
    let tokens = Tensor::randn(&[40, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(4));
    let perm: Vec<usize> = (0..40).map(|i| (i * 17 + 5) % 40).collect();
    let pt = t.permuted(&perm);

    let lat = encode(&params, &cfg, &tokens, &t.coords()).unwrap();
    let lp = encode(&params, &cfg, &tokens.gather_rows(&perm), &pt.coords()).unwrap();
    let close = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).all(|(x, y)| (x - y).abs() < 1e-10);
    assert!(close(&lp.mean, &lat.mean.gather_rows(&perm)));
    assert!(close(&lp.log_var, &lat.log_var.gather_rows(&perm)));

    let rec = decode(&params, &cfg, &lat.mean, &t.coords()).unwrap();
    let rp = decode(&params, &cfg, &lat.mean.gather_rows(&perm), &pt.coords()).unwrap();
    assert!(close(&rp, &rec.gather_rows(&perm)));
}

#[test]
fn encoder_reads_masked_rows() {
    let cfg = small();
    let t = make_template(24, 0).unwrap();
    let params = init_compressor(&cfg, 0).unwrap();
    let a = Tensor::randn(&[24, 16], 1.0, &mut ChaCha8Rng::seed_from_u64(5));
    let mask: Vec<bool> = (0..24).map(|i| i % 4 != 0).collect();
    let mut b = a.clone();
    for v in b.row_mut(4) {
        *v += 1.0;
    }
    assert!(!mask[4]);
    let la = encode(&params, &cfg, &a, &t.coords()).unwrap();
    let lb = encode(&params, &cfg, &b, &t.coords()).unwrap();
    assert_ne!(la.mean, lb.mean);
    // Attention carries the change to rows that are valid.
    assert!((0..24).filter(|&i| mask[i]).any(|i| la.mean.row(i) != lb.mean.row(i)));
}

#[test]
fn reparameterized_sampling_is_seeded() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lat = LatentSet {
        mean: Tensor::randn(&[10, 8], 1.0, &mut rng),
        log_var: Tensor::randn(&[10, 8], 0.5, &mut rng),
    };
    let s = SeedStream::new(9);
    assert_eq!(lat.sample(s), lat.sample(s));
    assert_ne!(lat.sample(s), lat.sample(SeedStream::new(10)));
    let sure = LatentSet {
        mean: lat.mean.clone(),
        log_var: Tensor::full(&[10, 8], -200.0),
    };
    assert_eq!(sure.sample(s), lat.mean);
}

#[test]
fn masked_l1_ignores_invalid_rows() {
    let a = Tensor::from_rows(&[[0.0, 0.0], [1.0, 1.0], [5.0, -5.0]]).unwrap();
    let b = Tensor::from_rows(&[[1.0, -1.0], [1.0, 1.0], [0.0, 0.0]]).unwrap();
    assert_eq!(masked_l1(&a, &b, &[true, true, false]).unwrap(), 0.5);
    assert!(masked_l1(&a, &b, &[false; 3]).is_err());
}

#[test]
fn loss_falls_over_the_first_desk_steps() {
    let t = make_template(256, 0).unwrap();
    let codec = TokenCodec::new(64, 0).unwrap();
    let classes = CoverageClass::ALL;
    let raw: Vec<Tensor> = (0..64u64)
        .map(|i| {
            let prof = ObservabilityProfile::for_class(classes[i as usize % 3], 8);
            synth_identity(&t, &codec, i, &prof).unwrap().tokens
        })
        .collect();
    let stats = ChannelStats::fit(&raw).unwrap();
    let data: Vec<Tensor> = raw.iter().map(|r| stats.standardize(r).unwrap()).collect();
    let mut tr = CompressorTrainer::new(CompressorConfig::desk(), 0).unwrap();
    let losses: Vec<f64> = (0..50).map(|_| tr.train_step(&data, &t.coords()).unwrap().loss).collect();
    let window = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let avg: Vec<f64> = losses.windows(10).map(window).collect();
    for w in avg.windows(2).step_by(10) {
        assert!(w[1] < w[0], "{avg:?}");
    }
    assert!(avg[avg.len() - 1] < 0.7 * avg[0], "{avg:?}");
}

#[test]
fn training_is_deterministic() {
    let cfg = CompressorConfig { batch: 2, ..small() };
    let t = make_template(24, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let data: Vec<Tensor> = (0..5).map(|_| Tensor::randn(&[24, 16], 1.0, &mut rng)).collect();
    let run = || {
        let mut tr = CompressorTrainer::new(cfg.clone(), 11).unwrap();
        for _ in 0..5 {
            tr.train_step(&data, &t.coords()).unwrap();
        }
        tr
    };
    assert_eq!(run(), run());
}

proptest! {
    #[test]
    fn kl_is_nonnegative(
        mean in proptest::collection::vec(-5.0f64..5.0, 6),
        log_var in proptest::collection::vec(-8.0f64..8.0, 6),
    ) {
        let lat = LatentSet {
            mean: Tensor::matrix(3, 2, mean).unwrap(),
            log_var: Tensor::matrix(3, 2, log_var).unwrap(),
        };
        let t = Tensor::zeros(&[3, 4]);
        prop_assert!(compressor_loss(&t, &t, &lat, 1.0, 1.0).unwrap() >= 0.0);
    }
}
