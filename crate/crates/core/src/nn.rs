//! Layer helpers over the autodiff graph. Parameters live in a
//! [`ParamStore`] under dotted names and are looked up from a [`Bound`].

use std::f64::consts::PI;

use glca_numerics::params::glorot;
use glca_numerics::{Bound, Graph, ParamStore, Tensor, Var};
use rand::Rng;

use crate::error::Result;

pub const LN_EPS: f64 = 1e-5;
pub const RMS_EPS: f64 = 1e-6;

/// `W` (`fan_in x fan_out`, Glorot) and zero bias.
pub fn init_linear<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) {
    store.insert(format!("{name}.w"), glorot(fan_in, fan_out, rng));
    store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

/// Linear layer with every parameter zero; used for gates and output heads
/// that should start as the identity/no-op.
pub fn init_linear_zero(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) {
    store.insert(format!("{name}.w"), Tensor::zeros(&[fan_in, fan_out]));
    store.insert(format!("{name}.b"), Tensor::zeros(&[fan_out]));
}

pub fn init_layer_norm(store: &mut ParamStore, name: &str, width: usize) {
    store.insert(format!("{name}.gamma"), Tensor::full(&[width], 1.0));
    store.insert(format!("{name}.beta"), Tensor::zeros(&[width]));
}

pub fn linear(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{name}.w"))?;
    let b = p.get(&format!("{name}.b"))?;
    let y = g.matmul(x, w)?;
    Ok(g.add_row(y, b)?)
}

pub fn layer_norm(g: &mut Graph, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let n = g.layer_norm_rows(x, LN_EPS)?;
    let y = g.mul_row(n, p.get(&format!("{name}.gamma"))?)?;
    Ok(g.add_row(y, p.get(&format!("{name}.beta"))?)?)
}

/// Sinusoidal features of 3D points: `sin`/`cos` of each coordinate at
/// `n_freq` frequencies `π·2^(k/2)`. Shape `N x 6·n_freq`.
pub fn point_features(coords: &[f64], n_freq: usize) -> Tensor {
    let n = coords.len() / 3;
    let width = 6 * n_freq;
    let mut data = Vec::with_capacity(n * width);
    for p in coords.chunks(3) {
        for c in p {
            for k in 0..n_freq {
                let w = PI * 2f64.powf(k as f64 / 2.0);
                data.push((w * c).sin());
                data.push((w * c).cos());
            }
        }
    }
    Tensor::matrix(n, width, data).expect("feature layout")
}

/// Sinusoidal embedding of a scalar time, `1 x 2·half`.
pub fn time_features(t: f64, half: usize) -> Tensor {
    let mut data = Vec::with_capacity(2 * half);
    for k in 0..half {
        let freq = (-(10000f64.ln()) * k as f64 / half as f64).exp() * 1000.0;
        data.push((t * freq).sin());
        data.push((t * freq).cos());
    }
    Tensor::matrix(1, 2 * half, data).expect("feature layout")
}

/// Linear warmup from `peak · 1e-6` at step 0 to `peak` at `warmup`, then flat.
pub fn warmup_lr(step: u64, peak: f64, warmup: u64) -> f64 {
    if step >= warmup {
        return peak;
    }
    let start = peak * 1e-6;
    start + (peak - start) * step as f64 / warmup as f64
}

/// Scaled dot-product attention over `heads` equal column slices. `q` has the
/// query rows, `k`/`v` the key rows. When `qk_norm` is set, each head's
/// queries and keys are RMS-normalized first; `q_add`/`k_add` are then added
/// to the per-head slices (used for point embeddings).
pub struct Attention {
    pub heads: usize,
    pub qk_norm: bool,
}

impl Attention {
    pub fn forward(
        &self,
        g: &mut Graph,
        q: Var,
        k: Var,
        v: Var,
        q_add: Option<Var>,
        k_add: Option<Var>,
    ) -> Result<Var> {
        let width = g.value(q).cols();
        let d = width / self.heads;
        let scale = 1.0 / (d as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let q_rows = g.value(q).rows();
        for h in 0..self.heads {
            let mut qh = g.slice_cols(q, h * d, d)?;
            let mut kh = g.slice_cols(k, h * d, d)?;
            if self.qk_norm {
                qh = g.rms_norm_rows(qh, RMS_EPS)?;
                kh = g.rms_norm_rows(kh, RMS_EPS)?;
            }
            if let Some(add) = q_add {
                let a = g.slice_cols(add, h * d, d)?;
                let rows = g.value(a).rows();
                qh = add_leading_rows(g, qh, a, rows, q_rows)?;
            }
            if let Some(add) = k_add {
                let a = g.slice_cols(add, h * d, d)?;
                let rows = g.value(a).rows();
                let k_rows = g.value(kh).rows();
                kh = add_leading_rows(g, kh, a, rows, k_rows)?;
            }
            let vh = g.slice_cols(v, h * d, d)?;
            let s = g.matmul_nt(qh, kh)?;
            let s = g.scale(s, scale)?;
            let p = g.softmax_rows(s)?;
            outs.push(g.matmul(p, vh)?);
        }
        if outs.len() == 1 {
            Ok(outs[0])
        } else {
            Ok(g.concat_cols(&outs)?)
        }
    }
}

/// Adds `a` (`rows x d`) to the first `rows` rows of `x` (`total x d`).
fn add_leading_rows(g: &mut Graph, x: Var, a: Var, rows: usize, total: usize) -> Result<Var> {
    if rows == total {
        return Ok(g.add(x, a)?);
    }
    let head = g.slice_rows(x, 0, rows)?;
    let tail = g.slice_rows(x, rows, total - rows)?;
    let head = g.add(head, a)?;
    Ok(g.concat_rows(&[head, tail])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn point_features_layout() {
        let f = point_features(&[0.0, 0.5, 1.0, 0.25, 0.0, 0.0], 4);
        assert_eq!(f.shape(), &[2, 24]);
        // First coordinate 0: sin = 0, cos = 1 at every frequency.
        assert_eq!(f.at(0, 0), 0.0);
        assert_eq!(f.at(0, 1), 1.0);
    }

    #[test]
    fn attention_with_uniform_scores_averages_values() {
        let mut g = Graph::new();
        let q = g.constant(Tensor::zeros(&[2, 4]));
        let k = g.constant(Tensor::zeros(&[3, 4]));
        let v = g
            .constant(Tensor::from_rows(&[[1.0, 2.0, 3.0, 4.0], [3.0, 2.0, 1.0, 0.0], [2.0, 2.0, 2.0, 2.0]]).unwrap());
        let att = Attention { heads: 2, qk_norm: false };
        let o = att.forward(&mut g, q, k, v, None, None).unwrap();
        assert_eq!(g.value(o).row(1), &[2.0, 2.0, 2.0, 2.0]);
    }
}
