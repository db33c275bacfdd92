use std::f64::consts::PI;

use glca_splat::{BodyPose, Camera, Vector3};

use crate::template::{orbit_camera, sees, QueryPointSet};
use crate::wardrobe::CoverageClass;

/// One input frame: a camera and the body pose the subject held.
#[derive(Clone, Debug, PartialEq)]
pub struct View {
    pub camera: Camera,
    pub pose: BodyPose,
}

/// The views an identity was reconstructed from.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityProfile {
    pub class: CoverageClass,
    pub views: Vec<View>,
}

/// Points whose normal turns more than this from the front count as unseen
/// by frontal footage.
pub const FRONTAL_LIMIT_DEG: f64 = 115.0;
/// Half-height of the upper-body framing at the subject, centered at y = 0.46.
const UPPER_FRAME_HALF: f64 = 0.55;
const UPPER_FRAME_CENTER: f64 = 0.46;

impl ObservabilityProfile {
    /// Standard view set for a coverage class, all in the rest pose.
    pub fn for_class(class: CoverageClass, n_joints: usize) -> Self {
        let rest = BodyPose::identity(n_joints);
        let cams: Vec<Camera> = match class {
            CoverageClass::FullTurn => crate::template::survey_cameras(),
            CoverageClass::FrontalOnly => [-40.0f64, 0.0, 40.0]
                .iter()
                .map(|d| orbit_camera(d.to_radians(), 0.0))
                .collect(),
            CoverageClass::UpperBodyOnly => (0..8)
                .map(|k| {
                    let fov = 2.0 * (UPPER_FRAME_HALF / 4.0f64).atan();
                    Camera::orbit(
                        Vector3::new(0.0, UPPER_FRAME_CENTER, 0.0),
                        4.0,
                        k as f64 * PI / 4.0,
                        0.0,
                        fov,
                        64,
                        64,
                    )
                    .expect("orbit camera is valid")
                })
                .collect(),
        };
        Self {
            class,
            views: cams
                .into_iter()
                .map(|camera| View {
                    camera,
                    pose: rest.clone(),
                })
                .collect(),
        }
    }

    /// Per query point: seen by some view and allowed by the class. Points
    /// failing this receive degraded tokens.
    pub fn covered(&self, template: &QueryPointSet) -> Vec<bool> {
        let frontal_min = FRONTAL_LIMIT_DEG.to_radians().cos();
        template
            .points
            .iter()
            .zip(&template.normals)
            .map(|(p, n)| {
                let allowed = match self.class {
                    CoverageClass::FullTurn => true,
                    CoverageClass::FrontalOnly => n.z >= frontal_min,
                    CoverageClass::UpperBodyOnly => p.y >= 0.0,
                };
                allowed && self.views.iter().any(|v| sees(&v.camera, p, n))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::make_template;

    #[test]
    fn coverage_by_class() {
        let t = make_template(256, 11).unwrap();
        let full = ObservabilityProfile::for_class(CoverageClass::FullTurn, 8).covered(&t);
        assert!(full.iter().all(|c| *c));
        let upper = ObservabilityProfile::for_class(CoverageClass::UpperBodyOnly, 8).covered(&t);
        for (p, c) in t.points.iter().zip(&upper) {
            if p.y < 0.0 {
                assert!(!c);
            }
        }
        let frontal = ObservabilityProfile::for_class(CoverageClass::FrontalOnly, 8).covered(&t);
        let back = t.normals.iter().zip(&frontal).filter(|(n, _)| n.z < -0.9);
        for (_, c) in back {
            assert!(!c);
        }
        assert!(frontal.iter().filter(|c| **c).count() > 80);
    }
}
