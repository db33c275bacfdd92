//! Per-token visibility from rendered splat contributions.

use glca_numerics::Tensor;
use glca_splat::{lbs_transform, rasterize, Camera, GaussianSplat, SPLATS_PER_POINT};

use crate::detok::{detokenize, Detokenizer};
use crate::error::{invalid, Result};
use crate::profile::ObservabilityProfile;
use crate::template::QueryPointSet;

/// Default minimum number of visible splats for a token to count as visible.
pub const K_MIN: usize = 2;
/// Default relative threshold factor.
pub const TAU_FACTOR: f64 = 0.05;

/// Oracle limits.
pub const ORACLE_MAX_SPLATS: usize = 4096;
pub const ORACLE_MAX_SIDE: usize = 64;

/// Visibility threshold on a splat's per-view contribution.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tau {
    Absolute(f64),
    /// Multiple of the view's mean contribution over splats that received any.
    Relative(f64),
}

impl Default for Tau {
    fn default() -> Self {
        Tau::Relative(TAU_FACTOR)
    }
}

impl Tau {
    fn resolve(self, contributions: &[f64]) -> f64 {
        match self {
            Tau::Absolute(t) => t,
            Tau::Relative(f) => {
                let (sum, count) = contributions
                    .iter()
                    .filter(|c| **c > 0.0)
                    .fold((0.0, 0usize), |(s, n), c| (s + c, n + 1));
                if count == 0 {
                    f64::INFINITY
                } else {
                    f * sum / count as f64
                }
            }
        }
    }
}

/// Splats as seen in one view (already posed) with the view's camera.
#[derive(Clone, Copy, Debug)]
pub struct ViewScene<'a> {
    pub splats: &'a [GaussianSplat],
    pub camera: &'a Camera,
}

fn check_views(views: &[ViewScene<'_>]) -> Result<usize> {
    let first = views.first().ok_or_else(|| invalid("visibility needs at least one view"))?;
    let n = first.splats.len();
    if views.iter().any(|v| v.splats.len() != n) {
        return Err(invalid("views disagree on splat count"));
    }
    Ok(n)
}

/// A splat is visible when its contribution exceeds the threshold in some view.
pub fn splat_visibility(views: &[ViewScene<'_>], tau: Tau) -> Result<Vec<bool>> {
    let n = check_views(views)?;
    let (Tau::Absolute(t) | Tau::Relative(t)) = tau;
    if !(t > 0.0) {
        return Err(invalid(format!("tau must be positive, got {t}")));
    }
    let mut visible = vec![false; n];
    for v in views {
        let contrib = rasterize(v.splats, v.camera).contributions;
        let t = tau.resolve(&contrib);
        for (vis, c) in visible.iter_mut().zip(&contrib) {
            *vis |= *c > t;
        }
    }
    Ok(visible)
}

/// Token `i` is visible when at least `k_min` of its splats are.
pub fn token_mask(splat_visible: &[bool], k_min: usize) -> Vec<bool> {
    splat_visible
        .chunks(SPLATS_PER_POINT)
        .map(|g| g.iter().filter(|v| **v).count() >= k_min)
        .collect()
}

/// Bitset, least significant bit first, padded to whole bytes.
pub fn pack_mask(mask: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; mask.len().div_ceil(8)];
    for (i, &b) in mask.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_mask(bytes: &[u8], len: usize) -> Result<Vec<bool>> {
    if bytes.len() != len.div_ceil(8) {
        return Err(invalid(format!("mask of {len} bits needs {} bytes, got {}", len.div_ceil(8), bytes.len())));
    }
    Ok((0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

fn posed_views(
    tokens: &Tensor,
    detok: &Detokenizer,
    template: &QueryPointSet,
    profile: &ObservabilityProfile,
) -> Result<Vec<Vec<GaussianSplat>>> {
    let rest = detokenize(tokens, detok, template)?;
    Ok(profile
        .views
        .iter()
        .map(|v| lbs_transform(&rest, &template.rig, &v.pose))
        .collect::<std::result::Result<_, _>>()?)
}

fn scenes<'a>(posed: &'a [Vec<GaussianSplat>], profile: &'a ObservabilityProfile) -> Vec<ViewScene<'a>> {
    posed
        .iter()
        .zip(&profile.views)
        .map(|(s, v)| ViewScene {
            splats: s,
            camera: &v.camera,
        })
        .collect()
}

/// Decodes `tokens`, poses the splats for every profile view, and returns the
/// token mask.
pub fn identity_mask(
    tokens: &Tensor,
    detok: &Detokenizer,
    template: &QueryPointSet,
    profile: &ObservabilityProfile,
    tau: Tau,
    k_min: usize,
) -> Result<Vec<bool>> {
    let posed = posed_views(tokens, detok, template, profile)?;
    Ok(token_mask(&splat_visibility(&scenes(&posed, profile), tau)?, k_min))
}

/// [`identity_mask`] computed by the brute-force oracle.
pub fn identity_oracle_mask(
    tokens: &Tensor,
    detok: &Detokenizer,
    template: &QueryPointSet,
    profile: &ObservabilityProfile,
    tau: Tau,
    k_min: usize,
) -> Result<Vec<bool>> {
    let posed = posed_views(tokens, detok, template, profile)?;
    oracle_mask(&scenes(&posed, profile), tau, k_min)
}

struct OracleSplat {
    index: usize,
    depth: f64,
    u: f64,
    v: f64,
    ia: f64,
    ib: f64,
    ic: f64,
    opacity: f64,
}

/// Screen-space Gaussian computed from first principles.
fn oracle_project(index: usize, s: &GaussianSplat, cam: &Camera) -> Option<OracleSplat> {
    let r = cam.rotation();
    let t = cam.translation();
    let w = [
        [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
        [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
        [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
    ];
    let p = [s.position.x, s.position.y, s.position.z];
    let mut c = [0.0; 3];
    for i in 0..3 {
        c[i] = w[i][0] * p[0] + w[i][1] * p[1] + w[i][2] * p[2] + t[i];
    }
    if !(c[2] > glca_splat::NEAR) || !c.iter().all(|x| x.is_finite()) {
        return None;
    }
    // Rotation matrix from the unit quaternion.
    let q = s.rotation.quaternion();
    let (qw, qx, qy, qz) = (q.w, q.i, q.j, q.k);
    let rot = [
        [1.0 - 2.0 * (qy * qy + qz * qz), 2.0 * (qx * qy - qw * qz), 2.0 * (qx * qz + qw * qy)],
        [2.0 * (qx * qy + qw * qz), 1.0 - 2.0 * (qx * qx + qz * qz), 2.0 * (qy * qz - qw * qx)],
        [2.0 * (qx * qz - qw * qy), 2.0 * (qy * qz + qw * qx), 1.0 - 2.0 * (qx * qx + qy * qy)],
    ];
    let var = [
        (2.0 * s.log_scale.x).exp(),
        (2.0 * s.log_scale.y).exp(),
        (2.0 * s.log_scale.z).exp(),
    ];
    let mut sigma = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            sigma[i][j] = (0..3).map(|k| rot[i][k] * var[k] * rot[j][k]).sum();
        }
    }
    let z = c[2];
    let jac = [
        [cam.fx / z, 0.0, -cam.fx * c[0] / (z * z)],
        [0.0, cam.fy / z, -cam.fy * c[1] / (z * z)],
    ];
    // M = J W (2x3), covariance = M Σ Mᵀ.
    let mut m = [[0.0; 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| jac[i][k] * w[k][j]).sum();
        }
    }
    let mut cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            cov[i][j] = (0..3)
                .map(|a| (0..3).map(|b| m[i][a] * sigma[a][b] * m[j][b]).sum::<f64>())
                .sum();
        }
    }
    let a = cov[0][0] + glca_splat::DILATION;
    let b = 0.5 * (cov[0][1] + cov[1][0]);
    let cc = cov[1][1] + glca_splat::DILATION;
    let det = a * cc - b * b;
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    Some(OracleSplat {
        index,
        depth: z,
        u: cam.fx * c[0] / z + cam.cx,
        v: cam.fy * c[1] / z + cam.cy,
        ia: cc / det,
        ib: -b / det,
        ic: a / det,
        opacity: 1.0 / (1.0 + (-s.opacity_logit).exp()),
    })
}

/// Contributions by visiting every pixel and every splat in depth order.
fn oracle_contributions(splats: &[GaussianSplat], cam: &Camera) -> Vec<f64> {
    let mut list: Vec<OracleSplat> = splats
        .iter()
        .enumerate()
        .filter_map(|(i, s)| oracle_project(i, s, cam))
        .collect();
    list.sort_by(|a, b| a.depth.total_cmp(&b.depth).then(a.index.cmp(&b.index)));
    let mut contrib = vec![0.0; splats.len()];
    for py in 0..cam.height {
        for px in 0..cam.width {
            let mut transmittance = 1.0;
            for s in &list {
                let dx = px as f64 - s.u;
                let dy = py as f64 - s.v;
                let d2 = s.ia * dx * dx + 2.0 * s.ib * dx * dy + s.ic * dy * dy;
                if d2 > glca_splat::CUTOFF {
                    continue;
                }
                let alpha = (s.opacity * (-0.5 * d2).exp()).min(glca_splat::MAX_ALPHA);
                contrib[s.index] += alpha * transmittance;
                transmittance *= 1.0 - alpha;
            }
        }
    }
    contrib
}

/// Brute-force reference for `token_mask(splat_visibility(..))`.
pub fn oracle_mask(views: &[ViewScene<'_>], tau: Tau, k_min: usize) -> Result<Vec<bool>> {
    let n = check_views(views)?;
    if n > ORACLE_MAX_SPLATS {
        return Err(invalid(format!("oracle handles at most {ORACLE_MAX_SPLATS} splats, got {n}")));
    }
    if n % SPLATS_PER_POINT != 0 {
        return Err(invalid(format!("{n} splats do not form whole tokens")));
    }
    let mut visible = vec![false; n];
    for v in views {
        if v.camera.width > ORACLE_MAX_SIDE || v.camera.height > ORACLE_MAX_SIDE {
            return Err(invalid(format!(
                "oracle handles at most {ORACLE_MAX_SIDE}x{ORACLE_MAX_SIDE} pixels"
            )));
        }
        let contrib = oracle_contributions(v.splats, v.camera);
        let threshold = match tau {
            Tau::Absolute(t) => t,
            Tau::Relative(f) => {
                let on: Vec<f64> = contrib.iter().copied().filter(|c| *c > 0.0).collect();
                if on.is_empty() {
                    f64::INFINITY
                } else {
                    f * on.iter().sum::<f64>() / on.len() as f64
                }
            }
        };
        for (vis, c) in visible.iter_mut().zip(&contrib) {
            if *c > threshold {
                *vis = true;
            }
        }
    }
    let mut mask = Vec::with_capacity(n / SPLATS_PER_POINT);
    for group in visible.chunks(SPLATS_PER_POINT) {
        let mut count = 0;
        for v in group {
            if *v {
                count += 1;
            }
        }
        mask.push(count >= k_min);
    }
    Ok(mask)
}
