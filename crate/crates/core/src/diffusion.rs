//! Masked rectified-flow denoiser: double-stream transformer blocks over
//! latent and condition tokens, a learnable placeholder for unseen rows, and
//! a guided Euler sampler.

use glca_numerics::{adam_step, AdamConfig, AdamState, Bound, Graph, ParamStore, SeedStream, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditions::{draw_modality, ConditionBundle, ConditionSources, ImageKind, PARTS_DIM, SCRIBBLE_DIM, TEXT_DIM};
use crate::error::{invalid, CoreError, Result};
use crate::nn::{init_linear, init_linear_zero, linear, point_features, time_features, warmup_lr, Attention, LN_EPS};

pub const PLACEHOLDER: &str = "placeholder";
/// Sinusoid frequencies of the point embedding.
pub const POINT_FREQS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub latent_dim: usize,
    pub blocks: usize,
    pub channels: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub sigma_min: f64,
    pub cfg_drop: f64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub steps: u64,
    /// Identities per step.
    pub batch: usize,
}

impl DenoiserConfig {
    pub fn paper() -> Self {
        Self {
            latent_dim: 8,
            blocks: 28,
            channels: 1024,
            heads: 16,
            mlp_ratio: 4.0,
            sigma_min: 1e-5,
            cfg_drop: 0.25,
            lr: 2e-4,
            warmup_steps: 1_000,
            steps: 100_000,
            batch: 128,
        }
    }

    pub fn desk() -> Self {
        Self {
            latent_dim: 8,
            blocks: 4,
            channels: 128,
            heads: 4,
            mlp_ratio: 4.0,
            sigma_min: 1e-5,
            cfg_drop: 0.25,
            lr: 1e-3,
            warmup_steps: 100,
            steps: 2_000,
            batch: 4,
        }
    }

    /// Two narrow blocks, for gradient checks and quick runs.
    pub fn micro() -> Self {
        Self {
            blocks: 2,
            channels: 64,
            heads: 4,
            ..Self::desk()
        }
    }

    pub fn hidden(&self) -> usize {
        (self.channels as f64 * self.mlp_ratio).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.channels % self.heads != 0 {
            return Err(invalid(format!("{} channels do not split into {} heads", self.channels, self.heads)));
        }
        if self.channels % 2 != 0 || self.latent_dim == 0 || self.blocks == 0 || self.batch == 0 {
            return Err(invalid("denoiser widths and counts must be positive (channels even)"));
        }
        if !(0.0..=1.0).contains(&self.cfg_drop) || !(0.0..1.0).contains(&self.sigma_min) {
            return Err(invalid("cfg_drop must lie in [0, 1] and sigma_min in [0, 1)"));
        }
        Ok(())
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        warmup_lr(step, self.lr, self.warmup_steps)
    }
}

const STREAMS: [&str; 3] = ["lat", "txt", "img"];

pub fn init_denoiser(config: &DenoiserConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let c = config.channels;
    let mut rng = SeedStream::new(seed).derive("denoiser-init").rng();
    let mut p = ParamStore::new();
    init_linear(&mut p, "lat.in", config.latent_dim, c, &mut rng);
    init_linear(&mut p, "txt.in", TEXT_DIM, c, &mut rng);
    init_linear(&mut p, "scr.in", SCRIBBLE_DIM, c, &mut rng);
    init_linear(&mut p, "prt.in", PARTS_DIM, c, &mut rng);
    init_linear(&mut p, "point", 6 * POINT_FREQS, c, &mut rng);
    init_linear(&mut p, "time.l1", c, c, &mut rng);
    init_linear(&mut p, "time.l2", c, c, &mut rng);
    for b in 0..config.blocks {
        for s in STREAMS {
            let name = format!("b{b}.{s}");
            init_linear_zero(&mut p, &format!("{name}.mod"), c, 6 * c);
            init_linear(&mut p, &format!("{name}.qkv"), c, 3 * c, &mut rng);
            init_linear(&mut p, &format!("{name}.o"), c, c, &mut rng);
            init_linear(&mut p, &format!("{name}.ff1"), c, config.hidden(), &mut rng);
            init_linear(&mut p, &format!("{name}.ff2"), config.hidden(), c, &mut rng);
        }
    }
    init_linear_zero(&mut p, "final.mod", c, 2 * c);
    init_linear_zero(&mut p, "final.out", c, config.latent_dim);
    p.insert(PLACEHOLDER, Tensor::zeros(&[config.latent_dim]));
    Ok(p)
}

/// Rows of `latents` where `mask` is false become `placeholder`.
pub fn apply_placeholder(latents: &Tensor, mask: &[bool], placeholder: &[f64]) -> Result<Tensor> {
    let (n, d) = latents.dims2()?;
    if mask.len() != n || placeholder.len() != d {
        return Err(invalid("mask or placeholder does not match the latent shape"));
    }
    let mut out = latents.clone();
    for (i, &keep) in mask.iter().enumerate() {
        if !keep {
            out.row_mut(i).copy_from_slice(placeholder);
        }
    }
    Ok(out)
}

/// `LN(x) * (1 + scale) + shift` with a parameter-free layer norm.
fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Result<Var> {
    let n = g.layer_norm_rows(x, LN_EPS)?;
    let s = g.add_scalar(scale, 1.0)?;
    let y = g.mul_row(n, s)?;
    Ok(g.add_row(y, shift)?)
}

struct Stream {
    key: &'static str,
    h: Var,
    rows: usize,
}

fn embed_stream(g: &mut Graph, p: &Bound, key: &'static str, proj: &str, x: &Tensor) -> Result<Stream> {
    let rows = x.rows();
    let v = g.constant(x.clone());
    Ok(Stream {
        key,
        h: linear(g, p, proj, v)?,
        rows,
    })
}

/// Velocity for one identity as a graph node. `z` is `N x D_Z`, `points`
/// the `N x 6·POINT_FREQS` point features.
pub fn denoiser_graph(
    g: &mut Graph,
    p: &Bound,
    config: &DenoiserConfig,
    z: Var,
    t: f64,
    points: Var,
    bundle: &ConditionBundle,
) -> Result<Var> {
    let c = config.channels;
    let mut streams = vec![Stream {
        key: "lat",
        h: linear(g, p, "lat.in", z)?,
        rows: g.value(z).rows(),
    }];
    if let Some(text) = &bundle.text {
        streams.push(embed_stream(g, p, "txt", "txt.in", text)?);
    }
    if let (Some(image), Some(kind)) = (&bundle.image, bundle.image_kind) {
        let proj = match kind {
            ImageKind::Scribble => "scr.in",
            ImageKind::BodyParts => "prt.in",
        };
        streams.push(embed_stream(g, p, "img", proj, image)?);
    }
    let pe = linear(g, p, "point", points)?;

    let tf = g.constant(time_features(t, c / 2));
    let temb = linear(g, p, "time.l1", tf)?;
    let temb = g.silu(temb)?;
    let temb = linear(g, p, "time.l2", temb)?;
    let cond = g.silu(temb)?;

    let att = Attention {
        heads: config.heads,
        qk_norm: true,
    };
    for b in 0..config.blocks {
        let mut qs = Vec::new();
        let mut ks = Vec::new();
        let mut vs = Vec::new();
        let mut mods = Vec::new();
        for s in &streams {
            let name = format!("b{b}.{}", s.key);
            let m = linear(g, p, &format!("{name}.mod"), cond)?;
            let chunk: Vec<Var> = (0..6).map(|k| g.slice_cols(m, k * c, c)).collect::<std::result::Result<_, _>>()?;
            let x = modulate(g, s.h, chunk[0], chunk[1])?;
            let qkv = linear(g, p, &format!("{name}.qkv"), x)?;
            qs.push(g.slice_cols(qkv, 0, c)?);
            ks.push(g.slice_cols(qkv, c, c)?);
            vs.push(g.slice_cols(qkv, 2 * c, c)?);
            mods.push(chunk);
        }
        let (q, k, v) = if streams.len() == 1 {
            (qs[0], ks[0], vs[0])
        } else {
            (g.concat_rows(&qs)?, g.concat_rows(&ks)?, g.concat_rows(&vs)?)
        };
        let joint = att.forward(g, q, k, v, Some(pe), Some(pe))?;
        let mut start = 0;
        for (s, chunk) in streams.iter_mut().zip(&mods) {
            let name = format!("b{b}.{}", s.key);
            let a = if s.rows == g.value(joint).rows() {
                joint
            } else {
                g.slice_rows(joint, start, s.rows)?
            };
            start += s.rows;
            let a = linear(g, p, &format!("{name}.o"), a)?;
            let a = g.mul_row(a, chunk[2])?;
            let h = g.add(s.h, a)?;
            let x = modulate(g, h, chunk[3], chunk[4])?;
            let f = linear(g, p, &format!("{name}.ff1"), x)?;
            let f = g.silu(f)?;
            let f = linear(g, p, &format!("{name}.ff2"), f)?;
            let f = g.mul_row(f, chunk[5])?;
            s.h = g.add(h, f)?;
        }
    }
    let m = linear(g, p, "final.mod", cond)?;
    let shift = g.slice_cols(m, 0, c)?;
    let scale = g.slice_cols(m, c, c)?;
    let x = modulate(g, streams[0].h, shift, scale)?;
    linear(g, p, "final.out", x)
}

fn check_latents(z: &Tensor, coords: &[f64], config: &DenoiserConfig) -> Result<()> {
    let (n, d) = z.dims2()?;
    if d != config.latent_dim {
        return Err(CoreError::Width {
            what: "latent width",
            expected: config.latent_dim,
            got: d,
        });
    }
    if n * 3 != coords.len() {
        return Err(CoreError::Width {
            what: "latent rows vs query points",
            expected: coords.len() / 3,
            got: n,
        });
    }
    Ok(())
}

/// Predicted velocity `N x D_Z` at state `z_t`, time `t`.
pub fn denoiser_forward(
    params: &ParamStore,
    config: &DenoiserConfig,
    z_t: &Tensor,
    t: f64,
    coords: &[f64],
    bundle: &ConditionBundle,
) -> Result<Tensor> {
    check_latents(z_t, coords, config)?;
    bundle.validate()?;
    let mut g = Graph::new();
    let p = g.bind(params, &[]);
    let z = g.constant(z_t.clone());
    let pts = g.constant(point_features(coords, POINT_FREQS));
    let v = denoiser_graph(&mut g, &p, config, z, t, pts, bundle)?;
    Ok(g.value(v).clone())
}

/// `Σ_i mask_i ‖v_i − u_i‖² / (D_Z · Σ_i mask_i)` as a graph node. Returns
/// `None` when no row is valid.
pub fn masked_mse(g: &mut Graph, pred: Var, target: Var, mask: &[bool]) -> Result<Option<Var>> {
    let valid = mask.iter().filter(|m| **m).count();
    if valid == 0 {
        return Ok(None);
    }
    let d = g.value(pred).cols();
    let diff = g.sub(pred, target)?;
    let sq = g.square(diff)?;
    let w = g.constant(Tensor::vector(mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()));
    let sq = g.mul_col(sq, w)?;
    let s = g.sum(sq)?;
    Ok(Some(g.scale(s, 1.0 / (d * valid) as f64)?))
}

/// Interpolant `z_t = (1 − (1 − σ)t) z_0 + t z_1` and target `u = z_1 − (1 − σ) z_0`.
pub fn flow_pair(g: &mut Graph, z0: Var, z1: Var, t: f64, sigma_min: f64) -> Result<(Var, Var)> {
    let a = g.scale(z0, 1.0 - (1.0 - sigma_min) * t)?;
    let b = g.scale(z1, t)?;
    let zt = g.add(a, b)?;
    let c = g.scale(z0, 1.0 - sigma_min)?;
    let u = g.sub(z1, c)?;
    Ok((zt, u))
}

/// Value of the masked conditional flow-matching loss for one identity, or
/// `None` when the mask has no valid row.
#[allow(clippy::too_many_arguments)]
pub fn cfm_loss(
    params: &ParamStore,
    config: &DenoiserConfig,
    z0: &Tensor,
    z1: &Tensor,
    t: f64,
    mask: &[bool],
    coords: &[f64],
    bundle: &ConditionBundle,
) -> Result<Option<f64>> {
    check_latents(z1, coords, config)?;
    let mut g = Graph::new();
    let p = g.bind(params, &[]);
    let a = g.constant(z0.clone());
    let b = g.constant(z1.clone());
    let (zt, u) = flow_pair(&mut g, a, b, t, config.sigma_min)?;
    let pts = g.constant(point_features(coords, POINT_FREQS));
    let v = denoiser_graph(&mut g, &p, config, zt, t, pts, bundle)?;
    match masked_mse(&mut g, v, u, mask)? {
        Some(l) => Ok(Some(g.value(l).item()?)),
        None => Ok(None),
    }
}

/// Guided velocity `v_u + s (v_c − v_u)`; the unconditional pass is skipped
/// when `s == 1` or the bundle is already null.
pub fn guided_velocity(
    params: &ParamStore,
    config: &DenoiserConfig,
    z: &Tensor,
    t: f64,
    coords: &[f64],
    bundle: &ConditionBundle,
    cfg_scale: f64,
) -> Result<Tensor> {
    let vc = denoiser_forward(params, config, z, t, coords, bundle)?;
    if cfg_scale == 1.0 || bundle.is_null() {
        return Ok(vc);
    }
    let vu = denoiser_forward(params, config, z, t, coords, &bundle.null())?;
    Ok(vu.zip_map(&vc, |u, c| u + cfg_scale * (c - u))?)
}

/// Central-difference check of the flow-matching loss gradient at randomized
/// parameters. Returns the relative error of each parameter tensor the
/// bundle reaches, probed at `picks` entries.
pub fn loss_gradient_check(
    config: &DenoiserConfig,
    coords: &[f64],
    bundle: &ConditionBundle,
    picks: usize,
    h: f64,
    seed: SeedStream,
) -> Result<Vec<(String, f64)>> {
    let mut rng = seed.rng();
    let mut params = ParamStore::new();
    for (name, t) in init_denoiser(config, seed.seed())?.iter() {
        params.insert(name, Tensor::randn(t.shape(), 0.3, &mut rng));
    }
    let n = coords.len() / 3;
    let z0 = Tensor::randn(&[n, config.latent_dim], 1.0, &mut rng);
    let z1 = Tensor::randn(&[n, config.latent_dim], 1.0, &mut rng);
    let mask: Vec<bool> = (0..n).map(|i| i % 3 != 1).collect();
    let t = 0.35;

    let mut g = Graph::new();
    let p = g.bind(&params, &[]);
    let a = g.constant(z0.clone());
    let b = g.constant(z1.clone());
    let (zt, u) = flow_pair(&mut g, a, b, t, config.sigma_min)?;
    let pts = g.constant(point_features(coords, POINT_FREQS));
    let v = denoiser_graph(&mut g, &p, config, zt, t, pts, bundle)?;
    let loss = masked_mse(&mut g, v, u, &mask)?.ok_or_else(|| invalid("empty mask"))?;
    let grads = g.backward(loss)?.collect(&p);

    let mut inert = vec![PLACEHOLDER.to_string()];
    match bundle.image_kind {
        Some(ImageKind::Scribble) => inert.push("prt.".into()),
        Some(ImageKind::BodyParts) => inert.push("scr.".into()),
        None => inert.extend(["scr.".into(), "prt.".into()]),
    }
    if bundle.text.is_none() {
        inert.extend(["txt.".into(), ".txt.".into()]);
    }
    if bundle.image.is_none() {
        inert.push(".img.".into());
    }
    let mut out = Vec::new();
    for (name, tensor) in params.iter() {
        if name == PLACEHOLDER || inert.iter().any(|k| name.starts_with(k.as_str()) || name.contains(k.as_str())) {
            continue;
        }
        let analytic = &grads[name];
        let mut an = Vec::new();
        let mut nu = Vec::new();
        for _ in 0..picks {
            let i = rng.random_range(0..tensor.len());
            let mut probe = params.clone();
            probe.get_mut(name).expect("probed parameter").data_mut()[i] += h;
            let plus = cfm_loss(&probe, config, &z0, &z1, t, &mask, coords, bundle)?.unwrap_or(0.0);
            probe.get_mut(name).expect("probed parameter").data_mut()[i] -= 2.0 * h;
            let minus = cfm_loss(&probe, config, &z0, &z1, t, &mask, coords, bundle)?.unwrap_or(0.0);
            an.push(analytic.data()[i]);
            nu.push((plus - minus) / (2.0 * h));
        }
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff: Vec<f64> = an.iter().zip(&nu).map(|(x, y)| x - y).collect();
        let scale = norm(&an).max(norm(&nu));
        let rel = if scale < 1e-9 { norm(&diff) } else { norm(&diff) / scale };
        out.push((name.to_string(), rel));
    }
    Ok(out)
}

/// Euler integration from noise at `t = 0` to data at `t = 1`.
pub fn sample(
    params: &ParamStore,
    config: &DenoiserConfig,
    coords: &[f64],
    bundle: &ConditionBundle,
    cfg_scale: f64,
    steps: usize,
    seed: SeedStream,
) -> Result<Tensor> {
    if steps == 0 {
        return Err(invalid("sampling needs at least one step"));
    }
    bundle.validate()?;
    let n = coords.len() / 3;
    let mut z = Tensor::randn(&[n, config.latent_dim], 1.0, &mut seed.derive("z0").rng());
    let dt = 1.0 / steps as f64;
    for k in 0..steps {
        let t = k as f64 * dt;
        let v = guided_velocity(params, config, &z, t, coords, bundle, cfg_scale)?;
        z = z.zip_map(&v, |a, b| a + dt * b)?;
        if !z.is_finite() {
            return Err(CoreError::NonFinite { step: k });
        }
    }
    Ok(z)
}

/// How unseen rows are handled during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MaskMode {
    /// Placeholder substitution plus masked loss.
    Visibility,
    /// Every row counts as valid; nothing is substituted.
    Ignore,
}

/// Training options that differ between the full method and its ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub mask: MaskMode,
    /// Placeholder held at zero and excluded from updates.
    pub freeze_placeholder: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            mask: MaskMode::Visibility,
            freeze_placeholder: false,
        }
    }
}

/// One training identity: standardized latents, mask, and condition sources.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowExample {
    pub latents: Tensor,
    pub mask: Vec<bool>,
    pub conditions: ConditionSources,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionStep {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    /// Identities in the batch (fully masked ones are skipped).
    pub used: usize,
    pub dropped: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrainer {
    pub config: DenoiserConfig,
    pub options: TrainOptions,
    pub seed: u64,
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
}

impl DiffusionTrainer {
    pub fn new(config: DenoiserConfig, options: TrainOptions, seed: u64) -> Result<Self> {
        let params = init_denoiser(&config, seed)?;
        Ok(Self {
            config,
            options,
            seed,
            params,
            adam: AdamState::default(),
            step: 0,
        })
    }

    pub fn placeholder(&self) -> &[f64] {
        self.params.get(PLACEHOLDER).expect("placeholder is always present").data()
    }

    pub fn train_step(&mut self, data: &[FlowExample], coords: &[f64]) -> Result<DiffusionStep> {
        if data.is_empty() {
            return Err(invalid("diffusion training needs at least one identity"));
        }
        let cfg = &self.config;
        let stream = SeedStream::new(self.seed).derive("diffusion").index(self.step);
        let mut rng = stream.derive("batch").rng();
        let frozen: &[&str] = if self.options.freeze_placeholder { &[PLACEHOLDER] } else { &[] };
        let mut g = Graph::new();
        let p = g.bind(&self.params, frozen);
        let pts = g.constant(point_features(coords, POINT_FREQS));
        let ph = p.get(PLACEHOLDER)?;
        let mut losses = Vec::with_capacity(cfg.batch);
        let mut dropped = 0;
        for b in 0..cfg.batch {
            let ex = &data[rng.random_range(0..data.len())];
            check_latents(&ex.latents, coords, cfg)?;
            let sub = stream.derive("sample").index(b as u64);
            let mut srng = sub.rng();
            let t: f64 = srng.random();
            let (m, k) = draw_modality(&mut srng);
            let drop = srng.random_bool(cfg.cfg_drop);
            let mut bundle = ex.conditions.bundle(m, k);
            if drop {
                bundle = bundle.null();
                dropped += 1;
            }
            let z0 = Tensor::randn(ex.latents.shape(), 1.0, &mut sub.derive("z0").rng());
            let x = g.constant(ex.latents.clone());
            let all_valid;
            let mask: &[bool] = match self.options.mask {
                MaskMode::Visibility => &ex.mask,
                MaskMode::Ignore => {
                    all_valid = vec![true; ex.mask.len()];
                    &all_valid
                }
            };
            let z1 = match self.options.mask {
                MaskMode::Visibility => g.replace_rows(x, ph, mask)?,
                MaskMode::Ignore => x,
            };
            let z0 = g.constant(z0);
            let (zt, u) = flow_pair(&mut g, z0, z1, t, cfg.sigma_min)?;
            let v = denoiser_graph(&mut g, &p, cfg, zt, t, pts, &bundle)?;
            if let Some(l) = masked_mse(&mut g, v, u, mask)? {
                losses.push(l);
            }
        }
        let lr = cfg.learning_rate(self.step);
        let used = losses.len();
        if used == 0 {
            self.step += 1;
            return Ok(DiffusionStep {
                step: self.step - 1,
                loss: 0.0,
                lr,
                used,
                dropped,
            });
        }
        let mut total = losses[0];
        for &l in &losses[1..] {
            total = g.add(total, l)?;
        }
        let loss = g.scale(total, 1.0 / used as f64)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(CoreError::Diverged { step: self.step });
        }
        let grads = g.backward(loss)?.collect(&p);
        adam_step(&mut self.params, &grads, &mut self.adam, lr, AdamConfig::default())?;
        let out = DiffusionStep {
            step: self.step,
            loss: value,
            lr,
            used,
            dropped,
        };
        self.step += 1;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholder_substitution() {
        let z = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        let out = apply_placeholder(&z, &[true, false, true], &[9.0, 9.5]).unwrap();
        assert_eq!(out, Tensor::from_rows(&[[1.0, 2.0], [9.0, 9.5], [5.0, 6.0]]).unwrap());
        assert_eq!(apply_placeholder(&z, &[true; 3], &[0.0, 0.0]).unwrap(), z);
        let all = apply_placeholder(&z, &[false; 3], &[7.0, 8.0]).unwrap();
        assert!((0..3).all(|i| all.row(i) == [7.0, 8.0]));
        assert_eq!(apply_placeholder(&out, &[true, false, true], &[9.0, 9.5]).unwrap(), out);
        assert!(apply_placeholder(&z, &[true; 2], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn interpolant_endpoints() {
        let mut g = Graph::new();
        let z0 = g.constant(Tensor::from_rows(&[[1.0, -2.0]]).unwrap());
        let z1 = g.constant(Tensor::from_rows(&[[3.0, 5.0]]).unwrap());
        let (zt, u) = flow_pair(&mut g, z0, z1, 1.0, 0.0).unwrap();
        assert_eq!(g.value(zt).data(), &[3.0, 5.0]);
        assert_eq!(g.value(u).data(), &[2.0, 7.0]);
        let (zt, _) = flow_pair(&mut g, z0, z1, 0.0, 1e-5).unwrap();
        assert_eq!(g.value(zt).data(), &[1.0, -2.0]);
    }

    #[test]
    fn config_checks() {
        DenoiserConfig::paper().validate().unwrap();
        DenoiserConfig::desk().validate().unwrap();
        let mut c = DenoiserConfig::micro();
        c.heads = 3;
        assert!(c.validate().is_err());
        assert_eq!(DenoiserConfig::paper().hidden(), 4096);
    }
}
