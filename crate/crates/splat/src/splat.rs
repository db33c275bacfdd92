use std::io::{Read, Write};

use nalgebra::{Matrix3, Quaternion, UnitQuaternion, Vector3};

use crate::error::{Result, SplatError};

/// Floats stored per splat in a dump record.
pub const DUMP_FLOATS: usize = 14;

/// One anisotropic 3D Gaussian.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianSplat {
    pub position: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: UnitQuaternion<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl GaussianSplat {
    /// Isotropic, unrotated splat.
    pub fn isotropic(position: Vector3<f64>, scale: f64, opacity_logit: f64, color: Vector3<f64>) -> Self {
        Self {
            position,
            log_scale: Vector3::repeat(scale.ln()),
            rotation: UnitQuaternion::identity(),
            opacity_logit,
            color,
        }
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    /// World-space covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation.to_rotation_matrix().into_inner();
        let s2 = self.log_scale.map(|l| (2.0 * l).exp());
        r * Matrix3::from_diagonal(&s2) * r.transpose()
    }

    fn to_record(&self) -> [f32; DUMP_FLOATS] {
        let q = self.rotation.quaternion();
        [
            self.position.x as f32,
            self.position.y as f32,
            self.position.z as f32,
            self.log_scale.x as f32,
            self.log_scale.y as f32,
            self.log_scale.z as f32,
            q.w as f32,
            q.i as f32,
            q.j as f32,
            q.k as f32,
            self.opacity_logit as f32,
            self.color.x as f32,
            self.color.y as f32,
            self.color.z as f32,
        ]
    }

    fn from_record(r: &[f32; DUMP_FLOATS]) -> Result<Self> {
        if r.iter().any(|v| !v.is_finite()) {
            return Err(SplatError::Format("non-finite value in record".into()));
        }
        let v = |i: usize| f64::from(r[i]);
        let q = Quaternion::new(v(6), v(7), v(8), v(9));
        if q.norm() == 0.0 {
            return Err(SplatError::Format("zero quaternion".into()));
        }
        Ok(Self {
            position: Vector3::new(v(0), v(1), v(2)),
            log_scale: Vector3::new(v(3), v(4), v(5)),
            rotation: UnitQuaternion::from_quaternion(q),
            opacity_logit: v(10),
            color: Vector3::new(v(11), v(12), v(13)),
        })
    }
}

/// Little-endian dump: `u32` count, then 14 `f32` per splat
/// (position, log-scale, quaternion wxyz, opacity logit, rgb).
pub fn write_splats<W: Write>(mut w: W, splats: &[GaussianSplat]) -> Result<()> {
    let count = u32::try_from(splats.len()).map_err(|_| SplatError::Format("too many splats".into()))?;
    w.write_all(&count.to_le_bytes())?;
    for s in splats {
        for v in s.to_record() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_splats<R: Read>(mut r: R) -> Result<Vec<GaussianSplat>> {
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    let mut out = Vec::with_capacity(count.min(1 << 20));
    let mut rec = [0f32; DUMP_FLOATS];
    for _ in 0..count {
        for v in rec.iter_mut() {
            r.read_exact(&mut word)?;
            *v = f32::from_le_bytes(word);
        }
        out.push(GaussianSplat::from_record(&rec)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_isotropic_splat() {
        let s = GaussianSplat::isotropic(Vector3::zeros(), 0.5, 0.0, Vector3::zeros());
        let c = s.covariance();
        assert!((c - Matrix3::identity() * 0.25).norm() < 1e-15);
    }

    #[test]
    fn dump_round_trip() {
        let s = GaussianSplat {
            position: Vector3::new(0.5, -0.25, 2.0),
            log_scale: Vector3::new(-2.0, -3.0, -2.5),
            rotation: UnitQuaternion::from_euler_angles(0.25, 0.5, -0.75),
            opacity_logit: 1.5,
            color: Vector3::new(0.25, 0.5, 0.75),
        };
        let mut buf = Vec::new();
        write_splats(&mut buf, &[s.clone(), s.clone()]).unwrap();
        assert_eq!(buf.len(), 4 + 2 * DUMP_FLOATS * 4);
        let back = read_splats(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        assert!((back[1].position - s.position).norm() < 1e-6);
        assert!(back[0].rotation.angle_to(&s.rotation) < 1e-6);
        assert!(read_splats(&buf[..buf.len() - 1]).is_err());
    }
}
