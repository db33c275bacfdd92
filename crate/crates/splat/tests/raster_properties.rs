use glca_splat::{rasterize, rasterize_backward, Camera, GaussianSplat, Image, UnitQuaternion, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn camera() -> Camera {
    Camera::look_at(Vector3::new(0.0, 0.0, 3.0), Vector3::zeros(), Vector3::y(), 40.0, 32, 32).unwrap()
}

fn random_scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<GaussianSplat> {
    (0..n)
        .map(|_| GaussianSplat {
            position: Vector3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(-1.0..1.0),
            ),
            log_scale: Vector3::new(
                rng.random_range(-2.6..-1.6),
                rng.random_range(-2.6..-1.6),
                rng.random_range(-2.6..-1.6),
            ),
            rotation: UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
                rng.random_range(-3.0..3.0),
            ),
            opacity_logit: rng.random_range(-2.0..2.0),
            color: Vector3::new(rng.random(), rng.random(), rng.random()),
        })
        .collect()
}

fn weights(rng: &mut ChaCha8Rng, cam: &Camera) -> Image {
    let mut img = Image::transparent(cam.width, cam.height);
    for v in img.rgba.iter_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    img
}

fn loss(splats: &[GaussianSplat], cam: &Camera, w: &Image) -> f64 {
    let r = rasterize(splats, cam);
    r.image.rgba.iter().zip(&w.rgba).map(|(a, b)| a * b).sum()
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(n.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[test]
fn gradients_match_finite_differences() {
    const H: f64 = 1e-5;
    let cam = camera();
    for trial in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let splats = random_scene(&mut rng, 20);
        let w = weights(&mut rng, &cam);
        let grads = rasterize_backward(&splats, &cam, &w);

        let mut analytic = Vec::new();
        let mut numeric = Vec::new();
        for i in 0..splats.len() {
            let mut probe = splats.clone();
            probe[i].opacity_logit += H;
            let up = loss(&probe, &cam, &w);
            probe[i].opacity_logit -= 2.0 * H;
            let down = loss(&probe, &cam, &w);
            analytic.push(grads.opacity_logit[i]);
            numeric.push((up - down) / (2.0 * H));
            for ch in 0..3 {
                let mut probe = splats.clone();
                probe[i].color[ch] += H;
                let up = loss(&probe, &cam, &w);
                probe[i].color[ch] -= 2.0 * H;
                let down = loss(&probe, &cam, &w);
                analytic.push(grads.color[i][ch]);
                numeric.push((up - down) / (2.0 * H));
            }
        }
        let err = rel_err(&analytic, &numeric);
        assert!(err < 1e-3, "trial {trial}: relative error {err:e}");
        assert!(analytic.iter().any(|v| *v != 0.0));
    }
}

#[test]
fn splats_behind_camera_do_not_render() {
    let cam = camera();
    let behind = GaussianSplat::isotropic(Vector3::new(0.0, 0.0, 5.0), 0.3, 5.0, Vector3::x());
    let r = rasterize(&[behind], &cam);
    assert_eq!(r.contributions, vec![0.0]);
    assert!(r.image.rgba.iter().all(|&v| v == 0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn permutation_leaves_image_unchanged(seed in any::<u64>(), n in 1usize..24) {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let splats = random_scene(&mut rng, n);
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<GaussianSplat> = order.iter().map(|&i| splats[i].clone()).collect();
        let a = rasterize(&splats, &cam);
        let b = rasterize(&shuffled, &cam);
        prop_assert_eq!(&a.image, &b.image);
        for (k, &i) in order.iter().enumerate() {
            prop_assert_eq!(a.contributions[i], b.contributions[k]);
        }
    }

    #[test]
    fn alpha_stays_in_unit_interval(seed in any::<u64>(), n in 0usize..40) {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splats = random_scene(&mut rng, n);
        for s in splats.iter_mut() {
            s.opacity_logit *= 5.0;
        }
        let r = rasterize(&splats, &cam);
        for a in r.image.rgba.iter().skip(3).step_by(4) {
            prop_assert!((0.0..=1.0).contains(a));
        }
        prop_assert!(r.contributions.iter().all(|c| *c >= 0.0));
    }

    #[test]
    fn contribution_is_monotone_in_opacity(seed in any::<u64>(), n in 1usize..16, bump in 0.0f64..4.0) {
        let cam = camera();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut splats = random_scene(&mut rng, n);
        let target = rng.random_range(0..n);
        let before = rasterize(&splats, &cam).contributions[target];
        splats[target].opacity_logit += bump;
        let after = rasterize(&splats, &cam).contributions[target];
        prop_assert!(after >= before);
    }
}
