//! Surrogate token encoding: per-point appearance mixed into `D_T` channels by
//! a fixed orthogonal map, plus a position-dependent term and small noise.

use std::f64::consts::PI;

use glca_numerics::{SeedStream, Tensor};
use glca_splat::{GaussianSplat, Vector3, SPLATS_PER_POINT};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CoreError, Result};
use crate::template::QueryPointSet;

/// Appearance channels per point: rgb, opacity logit, log-scale, normal offset.
pub const APPEARANCE_DIM: usize = 6;

pub const BASE_OPACITY_LOGIT: f64 = 2.0;
pub const BASE_LOG_SCALE: f64 = -3.4;
/// Extra log-scale removed along the normal, flattening splats onto the skin.
pub const FLATTEN: f64 = 1.2;

const CENTER: [f64; APPEARANCE_DIM] = [0.5, 0.5, 0.5, BASE_OPACITY_LOGIT, BASE_LOG_SCALE, 0.0];
const SPREAD: [f64; APPEARANCE_DIM] = [0.25, 0.25, 0.25, 2.0, 0.25, 0.01];

const POS_FREQS: usize = 4;
const POS_FEATURES: usize = 3 * 2 * POS_FREQS;
const POS_GAIN: f64 = 0.5;
pub const TOKEN_NOISE: f64 = 0.005;

/// Raw appearance of one query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Appearance {
    pub rgb: [f64; 3],
    pub opacity_logit: f64,
    pub log_scale: f64,
    pub offset: f64,
}

impl Appearance {
    /// Mid-gray at base opacity and size; the zero of the normalized space.
    pub const NEUTRAL: Appearance = Appearance {
        rgb: [0.5; 3],
        opacity_logit: BASE_OPACITY_LOGIT,
        log_scale: BASE_LOG_SCALE,
        offset: 0.0,
    };

    fn raw(&self) -> [f64; APPEARANCE_DIM] {
        [self.rgb[0], self.rgb[1], self.rgb[2], self.opacity_logit, self.log_scale, self.offset]
    }

    pub fn normalized(&self) -> [f64; APPEARANCE_DIM] {
        let r = self.raw();
        std::array::from_fn(|k| (r[k] - CENTER[k]) / SPREAD[k])
    }

    pub fn from_normalized(v: &[f64]) -> Self {
        let r: [f64; APPEARANCE_DIM] = std::array::from_fn(|k| v[k] * SPREAD[k] + CENTER[k]);
        Self {
            rgb: [r[0], r[1], r[2]],
            opacity_logit: r[3],
            log_scale: r[4],
            offset: r[5],
        }
    }
}

/// The eight splats of every query point, in point order.
pub fn splats_from_appearance(template: &QueryPointSet, appearance: &[Appearance]) -> Result<Vec<GaussianSplat>> {
    if appearance.len() != template.len() {
        return Err(CoreError::Width {
            what: "appearance rows",
            expected: template.len(),
            got: appearance.len(),
        });
    }
    let mut out = Vec::with_capacity(template.len() * SPLATS_PER_POINT);
    for (i, a) in appearance.iter().enumerate() {
        let anchor = template.points[i] + template.normals[i] * a.offset;
        let color = Vector3::new(a.rgb[0], a.rgb[1], a.rgb[2]).map(|c| c.clamp(0.0, 1.0));
        for off in &template.splat_offsets[i] {
            out.push(GaussianSplat {
                position: anchor + off,
                log_scale: Vector3::new(a.log_scale, a.log_scale, a.log_scale - FLATTEN),
                rotation: template.frames[i],
                opacity_logit: a.opacity_logit,
                color,
            });
        }
    }
    Ok(out)
}

fn positional_features(p: &Vector3<f64>) -> [f64; POS_FEATURES] {
    let mut f = [0.0; POS_FEATURES];
    let mut k = 0;
    for c in 0..3 {
        for j in 0..POS_FREQS {
            let w = PI * (1u32 << j) as f64;
            f[k] = (w * p[c]).sin();
            f[k + 1] = (w * p[c]).cos();
            k += 2;
        }
    }
    f
}

/// Fixed linear map between appearance and tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenCodec {
    d_t: usize,
    /// `D_T x D_T` orthogonal mixing matrix; token = `basis · z`.
    basis: Tensor,
    /// `POS_FEATURES x n_pos` projection of the positional features.
    pos_proj: Tensor,
    n_pos: usize,
}

impl TokenCodec {
    pub fn new(d_t: usize, seed: u64) -> Result<Self> {
        if d_t < APPEARANCE_DIM + 2 {
            return Err(CoreError::Invalid(format!("token width {d_t} is below {}", APPEARANCE_DIM + 2)));
        }
        let stream = SeedStream::new(seed).derive("codec");
        let basis = gram_schmidt(d_t, &mut stream.derive("basis").rng());
        let n_pos = POS_FEATURES.min(d_t - APPEARANCE_DIM - 2);
        let pos_proj = Tensor::randn(
            &[POS_FEATURES, n_pos],
            POS_GAIN / (POS_FEATURES as f64).sqrt(),
            &mut stream.derive("pos").rng(),
        );
        Ok(Self {
            d_t,
            basis,
            pos_proj,
            n_pos,
        })
    }

    pub fn width(&self) -> usize {
        self.d_t
    }

    fn mix(&self, z: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            *o = self.basis.row(r).iter().zip(z).map(|(b, v)| b * v).sum();
        }
    }

    /// Encodes one point. `noise` supplies the unit-normal draws for the
    /// trailing channels.
    pub fn encode_point(&self, appearance: &Appearance, point: &Vector3<f64>, noise: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.d_t];
        z[..APPEARANCE_DIM].copy_from_slice(&appearance.normalized());
        let feats = positional_features(point);
        for j in 0..self.n_pos {
            z[APPEARANCE_DIM + j] = feats.iter().enumerate().map(|(f, v)| v * self.pos_proj.at(f, j)).sum();
        }
        for (slot, n) in z[APPEARANCE_DIM + self.n_pos..].iter_mut().zip(noise) {
            *slot = n * TOKEN_NOISE;
        }
        let mut out = vec![0.0; self.d_t];
        self.mix(&z, &mut out);
        out
    }

    /// Number of noise draws each point consumes.
    pub fn noise_dim(&self) -> usize {
        self.d_t - APPEARANCE_DIM - self.n_pos
    }

    /// Encodes all points; noise is drawn per point from `noise_seed`
    /// regardless of appearance, so unchanged points encode identically.
    pub fn encode(&self, template: &QueryPointSet, appearance: &[Appearance], noise_seed: SeedStream) -> Result<Tensor> {
        if appearance.len() != template.len() {
            return Err(CoreError::Width {
                what: "appearance rows",
                expected: template.len(),
                got: appearance.len(),
            });
        }
        let mut data = Vec::with_capacity(template.len() * self.d_t);
        for (i, (a, p)) in appearance.iter().zip(&template.points).enumerate() {
            let mut rng = noise_seed.index(i as u64).rng();
            let noise: Vec<f64> = (0..self.noise_dim()).map(|_| rng.sample(StandardNormal)).collect();
            data.extend(self.encode_point(a, p, &noise));
        }
        Ok(Tensor::matrix(template.len(), self.d_t, data)?)
    }

    /// Exact inverse on the appearance channels.
    pub fn decode(&self, tokens: &Tensor) -> Result<Vec<Appearance>> {
        let (n, d) = tokens.dims2()?;
        if d != self.d_t {
            return Err(CoreError::Width {
                what: "token width",
                expected: self.d_t,
                got: d,
            });
        }
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let row = tokens.row(i);
            let z: Vec<f64> = (0..APPEARANCE_DIM)
                .map(|k| (0..d).map(|r| self.basis.at(r, k) * row[r]).sum())
                .collect();
            out.push(Appearance::from_normalized(&z));
        }
        Ok(out)
    }
}

fn gram_schmidt<R: Rng>(n: usize, rng: &mut R) -> Tensor {
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    while cols.len() < n {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|a| *a /= norm);
            cols.push(v);
        }
    }
    Tensor::from_fn(&[n, n], |k| cols[k % n][k / n])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::template::make_template;

    #[test]
    fn basis_is_orthogonal() {
        let c = TokenCodec::new(16, 1).unwrap();
        let q = &c.basis;
        for a in 0..16 {
            for b in 0..16 {
                let dot: f64 = (0..16).map(|r| q.at(r, a) * q.at(r, b)).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn decode_inverts_encode() {
        let t = make_template(16, 2).unwrap();
        let c = TokenCodec::new(64, 2).unwrap();
        let app: Vec<Appearance> = (0..16)
            .map(|i| Appearance {
                rgb: [0.1 * (i % 9) as f64, 0.3, 0.9],
                opacity_logit: 1.0 - i as f64 * 0.2,
                log_scale: -3.0,
                offset: 0.004,
            })
            .collect();
        let tokens = c.encode(&t, &app, SeedStream::new(5)).unwrap();
        let back = c.decode(&tokens).unwrap();
        for (a, b) in app.iter().zip(&back) {
            for k in 0..3 {
                assert!((a.rgb[k] - b.rgb[k]).abs() < 1e-12);
            }
            assert!((a.opacity_logit - b.opacity_logit).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_token_is_neutral() {
        let c = TokenCodec::new(32, 9).unwrap();
        let back = c.decode(&Tensor::zeros(&[3, 32])).unwrap();
        assert!(back.iter().all(|a| *a == Appearance::NEUTRAL));
        assert!(c.decode(&Tensor::zeros(&[3, 31])).is_err());
    }
}
