use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Result, SplatError};
use crate::splat::GaussianSplat;

/// Splats decoded from each query point.
pub const SPLATS_PER_POINT: usize = 8;

/// Joint tree. Parents always precede their children, so index order is a
/// valid forward-kinematics order and joint 0 is the root.
#[derive(Clone, Debug, PartialEq)]
pub struct Skeleton {
    joints: Vec<Vector3<f64>>,
    parents: Vec<Option<usize>>,
    names: Vec<&'static str>,
}

pub mod joint {
    pub const ROOT: usize = 0;
    pub const SPINE: usize = 1;
    pub const HEAD: usize = 2;
    pub const LEFT_ARM: usize = 3;
    pub const RIGHT_ARM: usize = 4;
    pub const PELVIS: usize = 5;
    pub const LEFT_LEG: usize = 6;
    pub const RIGHT_LEG: usize = 7;
}

impl Skeleton {
    pub fn new(joints: Vec<Vector3<f64>>, parents: Vec<Option<usize>>, names: Vec<&'static str>) -> Result<Self> {
        if joints.is_empty() {
            return Err(SplatError::InvalidRig("no joints".into()));
        }
        if parents.len() != joints.len() || names.len() != joints.len() {
            return Err(SplatError::InvalidRig(format!(
                "{} joints but {} parents and {} names",
                joints.len(),
                parents.len(),
                names.len()
            )));
        }
        if parents[0].is_some() {
            return Err(SplatError::InvalidRig("joint 0 must be the root".into()));
        }
        for (j, p) in parents.iter().enumerate().skip(1) {
            match p {
                Some(p) if *p < j => {}
                _ => {
                    return Err(SplatError::InvalidRig(format!(
                        "joint {j} has parent {p:?}; parents must precede children"
                    )))
                }
            }
        }
        Ok(Self { joints, parents, names })
    }

    /// Eight-joint humanoid fitted to the `[-1, 1]³` template body with the
    /// pelvis at height 0. The figure faces `+z`; its left side is `+x`.
    pub fn humanoid() -> Self {
        let joints = vec![
            Vector3::new(0.0, 0.08, 0.0),
            Vector3::new(0.0, 0.5, 0.0),
            Vector3::new(0.0, 0.68, 0.0),
            Vector3::new(0.2, 0.55, 0.0),
            Vector3::new(-0.2, 0.55, 0.0),
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(0.1, -0.06, 0.0),
            Vector3::new(-0.1, -0.06, 0.0),
        ];
        let parents = vec![None, Some(0), Some(1), Some(1), Some(1), Some(0), Some(5), Some(5)];
        let names = vec!["root", "spine", "head", "left_arm", "right_arm", "pelvis", "left_leg", "right_leg"];
        Self::new(joints, parents, names).expect("humanoid skeleton is well formed")
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn joints(&self) -> &[Vector3<f64>] {
        &self.joints
    }

    pub fn parents(&self) -> &[Option<usize>] {
        &self.parents
    }

    pub fn names(&self) -> &[&'static str] {
        &self.names
    }

    /// Posed world transform of every joint.
    pub fn forward_kinematics(&self, pose: &BodyPose) -> Result<Vec<JointTransform>> {
        pose.validate(self.len())?;
        let mut out: Vec<JointTransform> = Vec::with_capacity(self.len());
        for j in 0..self.len() {
            let p = self.joints[j];
            let local = pose.rotations[j];
            let (rotation, anchor) = match self.parents[j] {
                None => (local, p + pose.translation),
                Some(parent) => {
                    let g = &out[parent];
                    (quat_mul(&g.rotation, &local), g.apply(&p))
                }
            };
            let matrix = rotation.to_rotation_matrix().into_inner();
            out.push(JointTransform {
                rotation,
                matrix,
                translation: anchor - matrix * p,
            });
        }
        Ok(out)
    }
}

/// Skeleton plus per-query-point skinning weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SkinnedRig {
    skeleton: Skeleton,
    weights: Vec<Vec<f64>>,
}

impl SkinnedRig {
    /// Rejects weight rows that are negative, the wrong length, or do not sum
    /// to 1 within `1e-6`.
    pub fn new(skeleton: Skeleton, weights: Vec<Vec<f64>>) -> Result<Self> {
        for (i, row) in weights.iter().enumerate() {
            if row.len() != skeleton.len() {
                return Err(SplatError::InvalidRig(format!(
                    "weight row {i} has {} entries for {} joints",
                    row.len(),
                    skeleton.len()
                )));
            }
            if row.iter().any(|w| !(*w >= 0.0)) {
                return Err(SplatError::InvalidRig(format!("weight row {i} has a negative entry")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(SplatError::InvalidRig(format!("weight row {i} sums to {sum}")));
            }
        }
        Ok(Self { skeleton, weights })
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }
}

/// Local joint rotations about each joint's rest position, plus a root offset.
#[derive(Clone, Debug, PartialEq)]
pub struct BodyPose {
    pub rotations: Vec<UnitQuaternion<f64>>,
    pub translation: Vector3<f64>,
}

impl BodyPose {
    pub fn identity(n_joints: usize) -> Self {
        Self {
            rotations: vec![UnitQuaternion::identity(); n_joints],
            translation: Vector3::zeros(),
        }
    }

    fn validate(&self, n_joints: usize) -> Result<()> {
        if self.rotations.len() != n_joints {
            return Err(SplatError::Count {
                what: "pose rotations",
                expected: n_joints,
                got: self.rotations.len(),
            });
        }
        for (j, q) in self.rotations.iter().enumerate() {
            if (q.quaternion().norm() - 1.0).abs() > 1e-6 {
                return Err(SplatError::InvalidPose(format!("rotation {j} is not normalized")));
            }
        }
        if !self.translation.iter().all(|v| v.is_finite()) {
            return Err(SplatError::InvalidPose("non-finite root translation".into()));
        }
        Ok(())
    }
}

/// Rigid map `x ↦ R x + t`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointTransform {
    pub rotation: UnitQuaternion<f64>,
    pub matrix: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl JointTransform {
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation,
            matrix: rotation.to_rotation_matrix().into_inner(),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self::new(UnitQuaternion::identity(), Vector3::zeros())
    }

    pub fn apply(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.matrix * x + self.translation
    }
}

// Written out so that products with the identity stay exact.
fn quat_mul(a: &UnitQuaternion<f64>, b: &UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    let (a, b) = (a.quaternion(), b.quaternion());
    if a.w == 1.0 && a.i == 0.0 && a.j == 0.0 && a.k == 0.0 {
        return UnitQuaternion::new_unchecked(*b);
    }
    if b.w == 1.0 && b.i == 0.0 && b.j == 0.0 && b.k == 0.0 {
        return UnitQuaternion::new_unchecked(*a);
    }
    UnitQuaternion::new_normalize(Quaternion::new(
        a.w * b.w - a.i * b.i - a.j * b.j - a.k * b.k,
        a.w * b.i + a.i * b.w + a.j * b.k - a.k * b.j,
        a.w * b.j - a.i * b.k + a.j * b.w + a.k * b.i,
        a.w * b.k + a.i * b.j - a.j * b.i + a.k * b.w,
    ))
}

/// Linear blend skinning with explicit joint transforms. `weights[p]` skins
/// the eight splats `8p..8p+8`.
pub fn lbs_with_transforms(
    splats: &[GaussianSplat],
    weights: &[Vec<f64>],
    transforms: &[JointTransform],
) -> Result<Vec<GaussianSplat>> {
    if splats.len() != weights.len() * SPLATS_PER_POINT {
        return Err(SplatError::Count {
            what: "splats",
            expected: weights.len() * SPLATS_PER_POINT,
            got: splats.len(),
        });
    }
    let deltas: Vec<Matrix3<f64>> = transforms.iter().map(|t| t.matrix - Matrix3::identity()).collect();
    let mut out = Vec::with_capacity(splats.len());
    for (row, group) in weights.iter().zip(splats.chunks(SPLATS_PER_POINT)) {
        if row.len() != transforms.len() {
            return Err(SplatError::Count {
                what: "weight row",
                expected: transforms.len(),
                got: row.len(),
            });
        }
        let blend = blended_rotation(row, transforms);
        for s in group {
            // Displacement form keeps the rest pose exact: every term is zero.
            let mut shift = Vector3::zeros();
            for (j, &w) in row.iter().enumerate() {
                if w != 0.0 {
                    shift += (deltas[j] * s.position + transforms[j].translation) * w;
                }
            }
            let mut posed = s.clone();
            posed.position = s.position + shift;
            posed.rotation = quat_mul(&blend, &s.rotation);
            out.push(posed);
        }
    }
    Ok(out)
}

/// Weighted quaternion average, sign-aligned to the dominant joint.
fn blended_rotation(row: &[f64], transforms: &[JointTransform]) -> UnitQuaternion<f64> {
    let dominant = row
        .iter()
        .enumerate()
        .fold(0, |best, (j, &w)| if w > row[best] { j } else { best });
    let reference = transforms[dominant].rotation.quaternion();
    let mut acc = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    for (j, &w) in row.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let q = transforms[j].rotation.quaternion();
        let sign = if q.dot(reference) < 0.0 { -1.0 } else { 1.0 };
        acc += q * (w * sign);
    }
    if acc.i == 0.0 && acc.j == 0.0 && acc.k == 0.0 && acc.w > 0.0 {
        return UnitQuaternion::identity();
    }
    UnitQuaternion::try_new(acc, 1e-12).unwrap_or_else(UnitQuaternion::identity)
}

/// Poses splats owned by the rig's query points; scales are unchanged.
pub fn lbs_transform(splats: &[GaussianSplat], rig: &SkinnedRig, pose: &BodyPose) -> Result<Vec<GaussianSplat>> {
    let transforms = rig.skeleton.forward_kinematics(pose)?;
    lbs_with_transforms(splats, &rig.weights, &transforms)
}
