use glca_core::visibility::{oracle_mask, splat_visibility, token_mask, Tau, ViewScene, K_MIN};
use glca_splat::{Camera, GaussianSplat, UnitQuaternion, Vector3, SPLATS_PER_POINT};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_group(rng: &mut impl Rng, spread: f64) -> Vec<GaussianSplat> {
    let center = Vector3::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8), rng.random_range(-0.6..0.6));
    (0..SPLATS_PER_POINT)
        .map(|_| GaussianSplat {
            position: center
                + Vector3::new(
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                    rng.random_range(-spread..spread),
                ),
            log_scale: Vector3::new(
                rng.random_range(-3.5..-1.2),
                rng.random_range(-3.5..-1.2),
                rng.random_range(-3.5..-1.2),
            ),
            rotation: UnitQuaternion::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            ),
            opacity_logit: rng.random_range(-3.0..4.0),
            color: Vector3::new(rng.random(), rng.random(), rng.random()),
        })
        .collect()
}

fn random_camera(rng: &mut impl Rng) -> Camera {
    let side = rng.random_range(16..=64usize);
    let yaw: f64 = rng.random_range(-3.1..3.1);
    let elev: f64 = rng.random_range(-0.6..0.6);
    let dist = rng.random_range(2.5..4.5);
    let eye = Vector3::new(yaw.sin() * elev.cos(), elev.sin(), yaw.cos() * elev.cos()) * dist;
    let focal = side as f64 * rng.random_range(0.9..1.6);
    Camera::look_at(eye, Vector3::zeros(), Vector3::y(), focal, side, side).unwrap()
}

fn random_scene(seed: u64, max_groups: usize) -> (Vec<GaussianSplat>, Vec<Camera>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups = rng.random_range(1..=max_groups);
    let splats = (0..groups).flat_map(|_| random_group(&mut rng, 0.15)).collect();
    let cams = (0..rng.random_range(1..=3)).map(|_| random_camera(&mut rng)).collect();
    (splats, cams)
}

fn scenes<'a>(splats: &'a [GaussianSplat], cams: &'a [Camera]) -> Vec<ViewScene<'a>> {
    cams.iter().map(|camera| ViewScene { splats, camera }).collect()
}

fn pipeline(views: &[ViewScene<'_>], tau: Tau, k_min: usize) -> Vec<bool> {
    token_mask(&splat_visibility(views, tau).unwrap(), k_min)
}

#[test]
fn oracle_agrees_on_random_scenes() {
    let mut mixed = 0;
    for seed in 0..60u64 {
        let (splats, cams) = random_scene(seed, 64);
        let views = scenes(&splats, &cams);
        for tau in [Tau::default(), Tau::Relative(0.5), Tau::Absolute(0.2)] {
            for k in [1, K_MIN, 5] {
                let mask = pipeline(&views, tau, k);
                assert_eq!(mask, oracle_mask(&views, tau, k).unwrap(), "seed {seed} {tau:?} k {k}");
                if mask.iter().any(|m| *m) && mask.iter().any(|m| !m) {
                    mixed += 1;
                }
            }
        }
    }
    // The scenes must actually exercise both outcomes.
    assert!(mixed > 60, "only {mixed} mixed masks");
}

#[test]
fn oracle_agrees_on_dense_scene() {
    let (splats, cams) = random_scene(1234, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut splats = splats;
    while splats.len() < 4096 {
        splats.extend(random_group(&mut rng, 0.1));
    }
    let views = scenes(&splats, &cams);
    assert_eq!(pipeline(&views, Tau::default(), K_MIN), oracle_mask(&views, Tau::default(), K_MIN).unwrap());
}

/// Group whose first `on` splats face the camera and the rest sit behind it.
fn partial_group(on: usize, x: f64) -> Vec<GaussianSplat> {
    (0..SPLATS_PER_POINT)
        .map(|k| {
            let z = if k < on { 0.0 } else { 6.0 };
            GaussianSplat::isotropic(Vector3::new(x + 0.03 * k as f64, 0.0, z), 0.08, 2.0, Vector3::x())
        })
        .collect()
}

#[test]
fn two_of_eight_boundary() {
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, 4.0), Vector3::zeros(), Vector3::y(), 40.0, 48, 48).unwrap();
    let splats: Vec<GaussianSplat> = [(2, -1.0), (1, -0.5), (3, 0.0), (0, 0.5), (8, 0.8)]
        .iter()
        .flat_map(|&(on, x)| partial_group(on, x))
        .collect();
    let views = [ViewScene { splats: &splats, camera: &cam }];
    let tau = Tau::Absolute(1e-3);
    let expected = vec![true, false, true, false, true];
    assert_eq!(pipeline(&views, tau, K_MIN), expected);
    assert_eq!(oracle_mask(&views, tau, K_MIN).unwrap(), expected);
    let strict = vec![false, false, true, false, true];
    assert_eq!(pipeline(&views, tau, 3), strict);
    assert_eq!(oracle_mask(&views, tau, 3).unwrap(), strict);
}

#[test]
fn oracle_rejects_oversized_scenes() {
    let cam = Camera::look_at(Vector3::new(0.0, 0.0, 4.0), Vector3::zeros(), Vector3::y(), 40.0, 65, 64).unwrap();
    let splats = partial_group(8, 0.0);
    assert!(oracle_mask(&[ViewScene { splats: &splats, camera: &cam }], Tau::default(), K_MIN).is_err());
    let small = Camera::look_at(Vector3::new(0.0, 0.0, 4.0), Vector3::zeros(), Vector3::y(), 40.0, 32, 32).unwrap();
    let many: Vec<GaussianSplat> = (0..4104).map(|_| splats[0].clone()).collect();
    assert!(oracle_mask(&[ViewScene { splats: &many, camera: &small }], Tau::default(), K_MIN).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn adding_a_view_never_hides_a_token(seed in any::<u64>(), extra in any::<u64>()) {
        let (splats, cams) = random_scene(seed, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(extra);
        let mut more = cams.clone();
        more.push(random_camera(&mut rng));
        let before = pipeline(&scenes(&splats, &cams), Tau::default(), K_MIN);
        let after = pipeline(&scenes(&splats, &more), Tau::default(), K_MIN);
        for (b, a) in before.iter().zip(&after) {
            prop_assert!(!b || *a);
        }
    }

    #[test]
    fn raising_tau_never_reveals_a_token(seed in any::<u64>(), lo in 0.01f64..1.0, step in 0.0f64..2.0) {
        let (splats, cams) = random_scene(seed, 12);
        let views = scenes(&splats, &cams);
        for (a, b) in [(Tau::Relative(lo), Tau::Relative(lo + step)), (Tau::Absolute(lo), Tau::Absolute(lo + step))] {
            let low = pipeline(&views, a, K_MIN);
            let high = pipeline(&views, b, K_MIN);
            for (l, h) in low.iter().zip(&high) {
                prop_assert!(*l || !h);
            }
        }
    }
}
