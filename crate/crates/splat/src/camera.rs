use nalgebra::{Matrix3, Vector3};

use crate::error::{Result, SplatError};

/// Pinhole camera. Camera space has `+z` forward, `+x` right and `+y` down;
/// pixel centers sit at integer coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// `rotation`/`translation` map world to camera coordinates.
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        focal: (f64, f64),
        principal: Option<(f64, f64)>,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if !(err <= 1e-6) || rotation.determinant() < 0.0 {
            return Err(SplatError::InvalidCamera(format!(
                "extrinsic rotation is not orthonormal (error {err:e})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(SplatError::InvalidCamera("empty resolution".into()));
        }
        if !(focal.0 > 0.0 && focal.1 > 0.0) {
            return Err(SplatError::InvalidCamera(format!("focal lengths {focal:?}")));
        }
        let (cx, cy) = principal.unwrap_or((width as f64 / 2.0, height as f64 / 2.0));
        Ok(Self {
            rotation,
            translation,
            fx: focal.0,
            fy: focal.1,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Camera at `eye` looking at `target`, with `up` pointing up in the image.
    pub fn look_at(
        eye: Vector3<f64>,
        target: Vector3<f64>,
        up: Vector3<f64>,
        focal: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let forward = (target - eye)
            .try_normalize(1e-12)
            .ok_or_else(|| SplatError::InvalidCamera("eye coincides with target".into()))?;
        let right = forward
            .cross(&up)
            .try_normalize(1e-12)
            .ok_or_else(|| SplatError::InvalidCamera("up is parallel to the view direction".into()))?;
        let down = forward.cross(&right);
        let rotation = Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()]);
        let translation = -(rotation * eye);
        Self::new(rotation, translation, (focal, focal), None, width, height)
    }

    /// Camera on a horizontal orbit around `center` at `yaw` radians
    /// (yaw 0 looks along `-z`, i.e. at the subject's front), raised by
    /// `elevation` radians. `fov_y` is the vertical field of view.
    pub fn orbit(
        center: Vector3<f64>,
        distance: f64,
        yaw: f64,
        elevation: f64,
        fov_y: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let dir = Vector3::new(
            yaw.sin() * elevation.cos(),
            elevation.sin(),
            yaw.cos() * elevation.cos(),
        );
        let focal = height as f64 / 2.0 / (fov_y / 2.0).tan();
        Self::look_at(center + dir * distance, center, Vector3::y(), focal, width, height)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn to_camera(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// World position of the optical center.
    pub fn eye(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn look_at_maps_target_to_principal_axis() {
        let cam = Camera::look_at(
            Vector3::new(0.0, 0.0, 3.0),
            Vector3::zeros(),
            Vector3::y(),
            50.0,
            32,
            32,
        )
        .unwrap();
        let p = cam.to_camera(&Vector3::zeros());
        assert!(p.x.abs() < 1e-12 && p.y.abs() < 1e-12);
        assert!((p.z - 3.0).abs() < 1e-12);
        // World +x appears to the right, world +y appears up (negative image y).
        assert!(cam.to_camera(&Vector3::x()).x > 0.0);
        assert!(cam.to_camera(&Vector3::y()).y < 0.0);
        assert!((cam.eye() - Vector3::new(0.0, 0.0, 3.0)).norm() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal_rotation() {
        let r = Matrix3::identity() * 1.01;
        assert!(Camera::new(r, Vector3::zeros(), (10.0, 10.0), None, 8, 8).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Camera::new(reflect, Vector3::zeros(), (10.0, 10.0), None, 8, 8).is_err());
    }

    #[test]
    fn orbit_yaw_zero_sits_in_front() {
        let cam = Camera::orbit(Vector3::zeros(), 4.0, 0.0, 0.0, 0.6, 16, 16).unwrap();
        assert!((cam.eye() - Vector3::new(0.0, 0.0, 4.0)).norm() < 1e-12);
    }
}
