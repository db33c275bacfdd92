use nalgebra::{Matrix2, Vector2, Vector3};

use crate::camera::Camera;
use crate::image::Image;
use crate::splat::GaussianSplat;

/// Splats closer than this (camera-space depth) are culled.
pub const NEAR: f64 = 1e-2;
/// Screen-space variance added to every projected footprint, in px².
pub const DILATION: f64 = 0.3;
/// Per-pixel alpha ceiling.
pub const MAX_ALPHA: f64 = 0.99;
/// Footprints are truncated at this squared Mahalanobis distance.
pub const CUTOFF: f64 = 9.0;

/// Screen-space Gaussian of one splat.
#[derive(Clone, Debug, PartialEq)]
pub struct Projection {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub depth: f64,
}

/// Perspective mean and EWA covariance `J W Σ Wᵀ Jᵀ`, or `None` when the
/// splat is at or behind the near plane.
pub fn project_splat(splat: &GaussianSplat, camera: &Camera) -> Option<Projection> {
    let p = camera.to_camera(&splat.position);
    if !(p.z > NEAR) || !p.iter().all(|v| v.is_finite()) {
        return None;
    }
    let (z, z2) = (p.z, p.z * p.z);
    let w = camera.rotation();
    // Rows of J W, where J is the 2x3 projection Jacobian.
    let jw0 = w.row(0).transpose() * (camera.fx / z) - w.row(2).transpose() * (camera.fx * p.x / z2);
    let jw1 = w.row(1).transpose() * (camera.fy / z) - w.row(2).transpose() * (camera.fy * p.y / z2);
    let sigma = splat.covariance();
    let s0 = sigma * jw0;
    let s1 = sigma * jw1;
    let a = jw0.dot(&s0);
    let b = jw0.dot(&s1);
    let c = jw1.dot(&s1);
    Some(Projection {
        mean: Vector2::new(camera.fx * p.x / z + camera.cx, camera.fy * p.y / z + camera.cy),
        cov: Matrix2::new(a, b, b, c),
        depth: z,
    })
}

/// Rendered RGBA (premultiplied) plus, per input splat, the sum over pixels
/// of `alpha * transmittance` it received.
#[derive(Clone, Debug, PartialEq)]
pub struct Render {
    pub image: Image,
    pub contributions: Vec<f64>,
}

struct Footprint {
    index: usize,
    mean: [f64; 2],
    conic: [f64; 3],
    opacity: f64,
    color: Vector3<f64>,
    x: (usize, usize),
    y: (usize, usize),
}

impl Footprint {
    /// Gaussian falloff at pixel `(x, y)`, or `None` outside the cutoff.
    #[inline]
    fn falloff(&self, x: usize, y: usize) -> Option<f64> {
        let dx = x as f64 - self.mean[0];
        let dy = y as f64 - self.mean[1];
        let d2 = self.conic[0] * dx * dx + 2.0 * self.conic[1] * dx * dy + self.conic[2] * dy * dy;
        (d2 <= CUTOFF).then(|| (-0.5 * d2).exp())
    }
}

fn alpha_of(opacity: f64, g: f64) -> f64 {
    (opacity * g).min(MAX_ALPHA)
}

/// Projects, culls, and depth-sorts (stable on input index) the splats.
fn footprints(splats: &[GaussianSplat], camera: &Camera) -> Vec<Footprint> {
    let mut items: Vec<(f64, Footprint)> = Vec::with_capacity(splats.len());
    for (index, s) in splats.iter().enumerate() {
        let Some(proj) = project_splat(s, camera) else { continue };
        let a = proj.cov[(0, 0)] + DILATION;
        let b = proj.cov[(0, 1)];
        let c = proj.cov[(1, 1)] + DILATION;
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            continue;
        }
        let mid = 0.5 * (a + c);
        let radius = 3.0 * (mid + (mid * mid - det).max(0.0).sqrt()).sqrt();
        let (mx, my) = (proj.mean.x, proj.mean.y);
        let x0 = (mx - radius).ceil().max(0.0);
        let y0 = (my - radius).ceil().max(0.0);
        let x1 = (mx + radius).floor().min(camera.width as f64 - 1.0);
        let y1 = (my + radius).floor().min(camera.height as f64 - 1.0);
        if !(x0 <= x1 && y0 <= y1) {
            continue;
        }
        items.push((
            proj.depth,
            Footprint {
                index,
                mean: [mx, my],
                conic: [c / det, -b / det, a / det],
                opacity: s.opacity(),
                color: s.color,
                x: (x0 as usize, x1 as usize),
                y: (y0 as usize, y1 as usize),
            },
        ));
    }
    items.sort_by(|l, r| l.0.total_cmp(&r.0).then(l.1.index.cmp(&r.1.index)));
    items.into_iter().map(|(_, f)| f).collect()
}

/// Front-to-back alpha compositing of all splats onto a transparent canvas.
pub fn rasterize(splats: &[GaussianSplat], camera: &Camera) -> Render {
    let (w, h) = (camera.width, camera.height);
    let mut image = Image::transparent(w, h);
    let mut trans = vec![1.0; w * h];
    let mut contributions = vec![0.0; splats.len()];
    for f in footprints(splats, camera) {
        let mut acc = 0.0;
        for y in f.y.0..=f.y.1 {
            for x in f.x.0..=f.x.1 {
                let Some(g) = f.falloff(x, y) else { continue };
                let pix = y * w + x;
                let alpha = alpha_of(f.opacity, g);
                let t = trans[pix];
                let weight = alpha * t;
                let px = &mut image.rgba[pix * 4..pix * 4 + 3];
                px[0] += f.color.x * weight;
                px[1] += f.color.y * weight;
                px[2] += f.color.z * weight;
                acc += weight;
                trans[pix] = t * (1.0 - alpha);
            }
        }
        contributions[f.index] = acc;
    }
    for (pix, t) in trans.iter().enumerate() {
        image.rgba[pix * 4 + 3] = 1.0 - t;
    }
    Render { image, contributions }
}

/// Gradients of a scalar loss with respect to splat color and opacity logit.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGrads {
    pub color: Vec<Vector3<f64>>,
    pub opacity_logit: Vec<f64>,
}

/// Back-propagates `d loss / d image` (same RGBA layout as the render)
/// through the compositing sum. Geometry is treated as fixed.
pub fn rasterize_backward(splats: &[GaussianSplat], camera: &Camera, grad_image: &Image) -> SplatGrads {
    let (w, h) = (camera.width, camera.height);
    assert_eq!(grad_image.rgba.len(), w * h * 4, "gradient image size");
    let fps = footprints(splats, camera);

    // Forward again, recording (pixel, falloff, alpha, transmittance before).
    let mut trans = vec![1.0; w * h];
    let mut records: Vec<Vec<(usize, f64, f64, f64)>> = Vec::with_capacity(fps.len());
    for f in &fps {
        let mut rec = Vec::new();
        for y in f.y.0..=f.y.1 {
            for x in f.x.0..=f.x.1 {
                let Some(g) = f.falloff(x, y) else { continue };
                let pix = y * w + x;
                let alpha = alpha_of(f.opacity, g);
                rec.push((pix, g, alpha, trans[pix]));
                trans[pix] *= 1.0 - alpha;
            }
        }
        records.push(rec);
    }

    let mut grads = SplatGrads {
        color: vec![Vector3::zeros(); splats.len()],
        opacity_logit: vec![0.0; splats.len()],
    };
    // Color composited by splats behind the current one.
    let mut behind = vec![Vector3::<f64>::zeros(); w * h];
    for (f, rec) in fps.iter().zip(&records).rev() {
        let mut d_color = Vector3::zeros();
        let mut d_logit = 0.0;
        let d_opacity = f.opacity * (1.0 - f.opacity);
        for &(pix, g, alpha, t) in rec.iter().rev() {
            let gi = &grad_image.rgba[pix * 4..pix * 4 + 4];
            let dc = Vector3::new(gi[0], gi[1], gi[2]);
            let weight = alpha * t;
            d_color += dc * weight;
            let d_alpha =
                dc.dot(&(f.color * t - behind[pix] / (1.0 - alpha))) + gi[3] * trans[pix] / (1.0 - alpha);
            if f.opacity * g < MAX_ALPHA {
                d_logit += d_alpha * g * d_opacity;
            }
            behind[pix] += f.color * weight;
        }
        grads.color[f.index] = d_color;
        grads.opacity_logit[f.index] = d_logit;
    }
    grads
}
