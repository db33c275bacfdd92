//! Capsule-composite humanoid and the query points sampled on its surface.

use std::f64::consts::PI;

use glca_numerics::SeedStream;
use glca_splat::{joint, Camera, SkinnedRig, Skeleton, UnitQuaternion, Vector3, SPLATS_PER_POINT};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Body segment a capsule belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Part {
    Head,
    Torso,
    Pelvis,
    LeftArm,
    RightArm,
    LeftLeg,
    RightLeg,
}

/// Wardrobe region that decides a point's color.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Region {
    Hair,
    Skin,
    Upper,
    Lower,
    Shoes,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::Hair, Region::Skin, Region::Upper, Region::Lower, Region::Shoes];

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub part: Part,
}

impl Capsule {
    const fn new(a: [f64; 3], b: [f64; 3], radius: f64, part: Part) -> Self {
        Self {
            a: Vector3::new(a[0], a[1], a[2]),
            b: Vector3::new(b[0], b[1], b[2]),
            radius,
            part,
        }
    }

    /// Parameter of the closest point on the axis, in `[0, 1]`.
    pub fn axis_param(&self, p: &Vector3<f64>) -> f64 {
        let ab = self.b - self.a;
        ((p - self.a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0)
    }

    pub fn axis_distance(&self, p: &Vector3<f64>) -> f64 {
        let t = self.axis_param(p);
        (p - (self.a + (self.b - self.a) * t)).norm()
    }

    fn area(&self) -> f64 {
        2.0 * PI * self.radius * (self.b - self.a).norm() + 4.0 * PI * self.radius * self.radius
    }

    /// Area-uniform surface sample: `(point, outward normal)`.
    fn sample<R: Rng>(&self, rng: &mut R) -> (Vector3<f64>, Vector3<f64>) {
        let axis = self.b - self.a;
        let len = axis.norm();
        let dir = axis / len;
        let side = 2.0 * PI * self.radius * len;
        if rng.random::<f64>() * self.area() < side {
            let u = if dir.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
            let e1 = dir.cross(&u).normalize();
            let e2 = dir.cross(&e1);
            let phi = rng.random::<f64>() * 2.0 * PI;
            let n = e1 * phi.cos() + e2 * phi.sin();
            let t = rng.random::<f64>();
            (self.a + axis * t + n * self.radius, n)
        } else {
            let n = loop {
                let v = Vector3::<f64>::from_fn(|_, _| rng.sample(StandardNormal));
                if let Some(v) = v.try_normalize(1e-9) {
                    break v;
                }
            };
            let center = if n.dot(&dir) >= 0.0 { self.b } else { self.a };
            (center + n * self.radius, n)
        }
    }
}

/// Rest-pose body, pelvis at height 0, facing `+z`, inside `[-1, 1]³`.
pub const BODY: [Capsule; 9] = [
    Capsule::new([0.0, 0.78, 0.0], [0.0, 0.87, 0.0], 0.11, Part::Head),
    Capsule::new([0.0, 0.14, 0.0], [0.0, 0.5, 0.0], 0.16, Part::Torso),
    Capsule::new([-0.08, 0.0, 0.0], [0.08, 0.0, 0.0], 0.13, Part::Pelvis),
    Capsule::new([0.24, 0.56, 0.0], [0.62, 0.14, 0.0], 0.05, Part::LeftArm),
    Capsule::new([-0.24, 0.56, 0.0], [-0.62, 0.14, 0.0], 0.05, Part::RightArm),
    Capsule::new([0.12, -0.06, 0.0], [0.16, -0.91, 0.0], 0.07, Part::LeftLeg),
    Capsule::new([-0.12, -0.06, 0.0], [-0.16, -0.91, 0.0], 0.07, Part::RightLeg),
    // Shoulder caps bridging torso and arms.
    Capsule::new([0.1, 0.52, 0.0], [0.24, 0.56, 0.0], 0.07, Part::LeftArm),
    Capsule::new([-0.1, 0.52, 0.0], [-0.24, 0.56, 0.0], 0.07, Part::RightArm),
];

/// Bone segment used to derive skinning weights, per joint.
fn bones() -> [(Vector3<f64>, Vector3<f64>); 8] {
    let v = Vector3::new;
    let mut b = [(Vector3::zeros(), Vector3::zeros()); 8];
    b[joint::ROOT] = (v(0.0, 0.08, 0.0), v(0.0, 0.28, 0.0));
    b[joint::SPINE] = (v(0.0, 0.28, 0.0), v(0.0, 0.62, 0.0));
    b[joint::HEAD] = (v(0.0, 0.68, 0.0), v(0.0, 0.92, 0.0));
    b[joint::LEFT_ARM] = (v(0.2, 0.55, 0.0), v(0.62, 0.14, 0.0));
    b[joint::RIGHT_ARM] = (v(-0.2, 0.55, 0.0), v(-0.62, 0.14, 0.0));
    b[joint::PELVIS] = (v(-0.12, 0.0, 0.0), v(0.12, 0.0, 0.0));
    b[joint::LEFT_LEG] = (v(0.12, -0.06, 0.0), v(0.16, -0.95, 0.0));
    b[joint::RIGHT_LEG] = (v(-0.12, -0.06, 0.0), v(-0.16, -0.95, 0.0));
    b
}

const SKIN_FALLOFF: f64 = 0.08;

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    (p - (a + ab * t)).norm()
}

/// Normalized `exp(-(d / 0.08)²)` weights from the distance to each bone.
pub fn skin_weights(p: &Vector3<f64>) -> Vec<f64> {
    let d2: Vec<f64> = bones().iter().map(|(a, b)| segment_distance(p, a, b).powi(2)).collect();
    let min = d2.iter().cloned().fold(f64::INFINITY, f64::min);
    let raw: Vec<f64> = d2
        .iter()
        .map(|d| (-(d - min) / (SKIN_FALLOFF * SKIN_FALLOFF)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.iter().map(|w| w / sum).collect()
}

/// Minimum distance between segments `p0-p1` and `q0-q1`.
fn segment_segment_distance(p0: &Vector3<f64>, p1: &Vector3<f64>, q0: &Vector3<f64>, q1: &Vector3<f64>) -> f64 {
    let d1 = p1 - p0;
    let d2 = q1 - q0;
    let r = p0 - q0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-12 { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    ((p0 + d1 * s) - (q0 + d2 * t)).norm()
}

/// Whether the straight segment from `from` to `to` clears every capsule by
/// at least `margin`.
pub fn segment_clear(from: &Vector3<f64>, to: &Vector3<f64>, margin: f64) -> bool {
    BODY.iter()
        .all(|c| segment_segment_distance(from, to, &c.a, &c.b) >= c.radius + margin)
}

/// Clearance demanded around other body parts; splats spill past the capsule
/// surface by about this much.
pub const OCCLUSION_MARGIN: f64 = 0.05;

/// Whether surface point `p` with normal `n` is plainly seen by `camera`:
/// facing it, inside the frame with a border, and not occluded.
pub fn sees(camera: &Camera, p: &Vector3<f64>, n: &Vector3<f64>) -> bool {
    const MIN_FACING: f64 = 0.25;
    const BORDER: f64 = 2.0;
    let eye = camera.eye();
    let to_eye = (eye - p).normalize();
    if n.dot(&to_eye) < MIN_FACING {
        return false;
    }
    let c = camera.to_camera(p);
    if c.z <= 0.0 {
        return false;
    }
    let u = camera.fx * c.x / c.z + camera.cx;
    let v = camera.fy * c.y / c.z + camera.cy;
    if u < BORDER || v < BORDER || u > camera.width as f64 - 1.0 - BORDER || v > camera.height as f64 - 1.0 - BORDER
    {
        return false;
    }
    segment_clear(&(p + n * (OCCLUSION_MARGIN + 0.01)), &eye, OCCLUSION_MARGIN)
}

/// Query points shared by every identity of a dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryPointSet {
    pub seed: u64,
    pub points: Vec<Vector3<f64>>,
    pub normals: Vec<Vector3<f64>>,
    pub parts: Vec<Part>,
    pub regions: Vec<Region>,
    pub rig: SkinnedRig,
    /// Rest-pose position of each of the point's splats relative to the point.
    pub splat_offsets: Vec<[Vector3<f64>; SPLATS_PER_POINT]>,
    /// Rotation taking the splat frame's `z` to the surface normal.
    pub frames: Vec<UnitQuaternion<f64>>,
}

impl QueryPointSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points as an `N x 3` row-major array.
    pub fn coords(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| [p.x, p.y, p.z]).collect()
    }

    /// Copy with points reordered so that new point `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let weights = perm.iter().map(|&i| self.rig.weights()[i].clone()).collect();
        Self {
            seed: self.seed,
            points: perm.iter().map(|&i| self.points[i]).collect(),
            normals: perm.iter().map(|&i| self.normals[i]).collect(),
            parts: perm.iter().map(|&i| self.parts[i]).collect(),
            regions: perm.iter().map(|&i| self.regions[i]).collect(),
            rig: SkinnedRig::new(self.rig.skeleton().clone(), weights).expect("rows already validated"),
            splat_offsets: perm.iter().map(|&i| self.splat_offsets[i]).collect(),
            frames: perm.iter().map(|&i| self.frames[i]).collect(),
        }
    }
}

fn region_of(part: Part, p: &Vector3<f64>, capsule: &Capsule) -> Region {
    match part {
        Part::Head => {
            if p.y > 0.88 || (p.z < -0.01 && p.y > 0.74) {
                Region::Hair
            } else {
                Region::Skin
            }
        }
        Part::Torso => Region::Upper,
        Part::LeftArm | Part::RightArm => {
            if capsule.radius > 0.06 || capsule.axis_param(p) < 0.45 {
                Region::Upper
            } else {
                Region::Skin
            }
        }
        Part::Pelvis => Region::Lower,
        Part::LeftLeg | Part::RightLeg => {
            if p.y < -0.8 {
                Region::Shoes
            } else {
                Region::Lower
            }
        }
    }
}

/// Cameras the template must be fully visible from: eight yaws at eye level
/// plus four raised views.
pub fn survey_cameras() -> Vec<Camera> {
    let mut cams = Vec::new();
    for k in 0..8 {
        cams.push(orbit_camera(k as f64 * PI / 4.0, 0.0));
    }
    for k in 0..4 {
        cams.push(orbit_camera(PI / 4.0 + k as f64 * PI / 2.0, 0.6));
    }
    cams
}

/// Orbit around the body center at the distance used for full-body views.
pub fn orbit_camera(yaw: f64, elevation: f64) -> Camera {
    Camera::orbit(Vector3::zeros(), 4.0, yaw, elevation, 0.58, 64, 64).expect("orbit camera is valid")
}

const SPLAT_SPREAD: f64 = 0.035;

/// Samples `n_points` surface points, area-uniformly, keeping only points that
/// are not buried inside another capsule, do not face steeply downward, and
/// are seen by at least one survey camera.
pub fn make_template(n_points: usize, seed: u64) -> Result<QueryPointSet> {
    if n_points < 8 {
        return Err(invalid(format!("template needs at least 8 points, got {n_points}")));
    }
    let stream = SeedStream::new(seed).derive("template");
    let mut rng = stream.derive("surface").rng();
    let cams = survey_cameras();
    let areas: Vec<f64> = BODY.iter().map(Capsule::area).collect();
    let total: f64 = areas.iter().sum();

    let mut points = Vec::with_capacity(n_points);
    let mut normals = Vec::with_capacity(n_points);
    let mut parts = Vec::with_capacity(n_points);
    let mut regions = Vec::with_capacity(n_points);
    let mut attempts = 0usize;
    while points.len() < n_points {
        attempts += 1;
        if attempts > n_points * 1000 {
            return Err(invalid("template sampling failed to converge"));
        }
        let mut pick = rng.random::<f64>() * total;
        let mut ci = 0;
        while ci + 1 < BODY.len() && pick >= areas[ci] {
            pick -= areas[ci];
            ci += 1;
        }
        let cap = &BODY[ci];
        let (p, n) = cap.sample(&mut rng);
        if n.y < -0.5 {
            continue;
        }
        let buried = BODY
            .iter()
            .enumerate()
            .any(|(j, c)| j != ci && c.axis_distance(&p) < c.radius + 0.01);
        if buried || !cams.iter().any(|cam| sees(cam, &p, &n)) {
            continue;
        }
        points.push(p);
        normals.push(n);
        parts.push(cap.part);
        regions.push(region_of(cap.part, &p, cap));
    }

    let weights = points.iter().map(skin_weights).collect();
    let rig = SkinnedRig::new(Skeleton::humanoid(), weights)?;

    let mut jitter = stream.derive("splats").rng();
    let mut splat_offsets = Vec::with_capacity(n_points);
    let mut frames = Vec::with_capacity(n_points);
    for n in &normals {
        let frame = UnitQuaternion::rotation_between(&Vector3::z(), n)
            .unwrap_or_else(|| UnitQuaternion::from_axis_angle(&Vector3::x_axis(), PI));
        let mut offs = [Vector3::zeros(); SPLATS_PER_POINT];
        for o in offs.iter_mut() {
            let local = Vector3::new(
                jitter.sample::<f64, _>(StandardNormal) * SPLAT_SPREAD,
                jitter.sample::<f64, _>(StandardNormal) * SPLAT_SPREAD,
                0.0,
            );
            *o = frame * local;
        }
        splat_offsets.push(offs);
        frames.push(frame);
    }

    Ok(QueryPointSet {
        seed,
        points,
        normals,
        parts,
        regions,
        rig,
        splat_offsets,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn body_fits_unit_box() {
        for c in &BODY {
            for e in [c.a, c.b] {
                assert!(e.iter().all(|v| v.abs() + c.radius <= 1.0), "{c:?}");
            }
        }
    }

    #[test]
    fn template_is_deterministic_and_bounded() {
        let a = make_template(256, 7).unwrap();
        let b = make_template(256, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 256);
        for (p, w) in a.points.iter().zip(a.rig.weights()) {
            assert!(p.iter().all(|v| v.abs() <= 1.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
        assert!(make_template(7, 7).is_err());
        assert_ne!(make_template(256, 8).unwrap().points, a.points);
    }

    #[test]
    fn every_region_and_lower_body_is_populated() {
        let t = make_template(256, 3).unwrap();
        for r in Region::ALL {
            assert!(t.regions.iter().any(|x| *x == r), "{r:?} missing");
        }
        assert!(t.points.iter().filter(|p| p.y < 0.0).count() > 40);
    }

    #[test]
    fn segment_distance_cases() {
        let o = Vector3::zeros();
        let x = Vector3::x();
        let d = segment_segment_distance(&o, &x, &Vector3::new(0.5, 1.0, -1.0), &Vector3::new(0.5, 1.0, 1.0));
        assert!((d - 1.0).abs() < 1e-12);
        let d = segment_segment_distance(&o, &x, &Vector3::new(2.0, 0.0, 0.0), &Vector3::new(3.0, 0.0, 0.0));
        assert!((d - 1.0).abs() < 1e-12);
    }
}
