//! Token autoencoder: per-token MLPs with positional embeddings and
//! self-attention compress `N x D_T` tokens to `N x D_Z` Gaussian latents.

use glca_numerics::{adam_step, AdamConfig, AdamState, Bound, Graph, ParamStore, SeedStream, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CoreError, Result};
use crate::nn::{init_layer_norm, init_linear, layer_norm, linear, point_features, warmup_lr, Attention};

/// Sinusoid frequencies of the positional embedding.
pub const POS_FREQS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompressorConfig {
    pub token_dim: usize,
    pub latent_dim: usize,
    /// Block widths; the last equals `latent_dim`.
    pub encoder: Vec<usize>,
    /// Block widths; the last equals `token_dim`.
    pub decoder: Vec<usize>,
    /// Target per-head width of attention.
    pub head_width: usize,
    pub lambda1: f64,
    pub lambda2_start: f64,
    pub lambda2_end: f64,
    pub kl_ramp_steps: u64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub steps: u64,
    /// Identities per step.
    pub batch: usize,
}

impl CompressorConfig {
    /// Full-size schedule.
    pub fn paper() -> Self {
        Self {
            token_dim: 1024,
            latent_dim: 8,
            encoder: vec![512, 256, 128, 64, 32, 16, 8],
            decoder: vec![32, 64, 128, 512, 1024],
            head_width: 64,
            lambda1: 1.0,
            lambda2_start: 1e-3,
            lambda2_end: 1e-2,
            kl_ramp_steps: 10_000,
            lr: 4e-4,
            warmup_steps: 1_000,
            steps: 100_000,
            batch: 256,
        }
    }

    pub fn desk() -> Self {
        Self {
            token_dim: 64,
            latent_dim: 8,
            encoder: vec![48, 24, 8],
            decoder: vec![24, 48, 64],
            head_width: 16,
            lambda1: 1.0,
            lambda2_start: 1e-3,
            lambda2_end: 1e-2,
            kl_ramp_steps: 1_500,
            lr: 2e-3,
            warmup_steps: 100,
            steps: 3_000,
            batch: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.last() != Some(&self.latent_dim) {
            return Err(invalid("encoder schedule must end at the latent width"));
        }
        if self.decoder.last() != Some(&self.token_dim) {
            return Err(invalid("decoder schedule must end at the token width"));
        }
        if self.encoder.iter().chain(&self.decoder).any(|w| *w == 0) || self.head_width == 0 {
            return Err(invalid("widths must be positive"));
        }
        if self.batch == 0 {
            return Err(invalid("batch must be positive"));
        }
        Ok(())
    }

    /// KL weight at `step`: linear ramp, then constant.
    pub fn lambda2(&self, step: u64) -> f64 {
        if step >= self.kl_ramp_steps {
            return self.lambda2_end;
        }
        let f = step as f64 / self.kl_ramp_steps as f64;
        self.lambda2_start + f * (self.lambda2_end - self.lambda2_start)
    }

    pub fn learning_rate(&self, step: u64) -> f64 {
        warmup_lr(step, self.lr, self.warmup_steps)
    }
}

/// Largest head count not exceeding `width / head_width` that divides `width`.
pub fn heads_for(width: usize, head_width: usize) -> usize {
    let mut h = (width / head_width).max(1);
    while width % h != 0 {
        h -= 1;
    }
    h
}

/// Gaussian posterior per token.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentSet {
    pub mean: Tensor,
    pub log_var: Tensor,
}

impl LatentSet {
    /// `mean + exp(log_var / 2) * eps` with `eps` drawn from `seed`.
    pub fn sample(&self, seed: SeedStream) -> Tensor {
        let mut rng = seed.rng();
        let mut out = self.mean.clone();
        for (o, lv) in out.data_mut().iter_mut().zip(self.log_var.data()) {
            let eps: f64 = rng.sample(rand_distr::StandardNormal);
            *o += (0.5 * lv).exp() * eps;
        }
        out
    }
}

fn init_block<R: Rng>(p: &mut ParamStore, name: &str, fan_in: usize, width: usize, rng: &mut R) {
    init_linear(p, &format!("{name}.in"), fan_in, width, rng);
    init_layer_norm(p, &format!("{name}.ln1"), width);
    init_linear(p, &format!("{name}.mlp"), width, width, rng);
    init_linear(p, &format!("{name}.pos"), 6 * POS_FREQS, width, rng);
    init_layer_norm(p, &format!("{name}.ln2"), width);
    init_linear(p, &format!("{name}.qkv"), width, 3 * width, rng);
    init_linear(p, &format!("{name}.out"), width, width, rng);
}

pub fn init_compressor(config: &CompressorConfig, seed: u64) -> Result<ParamStore> {
    config.validate()?;
    let mut rng = SeedStream::new(seed).derive("compressor-init").rng();
    let mut p = ParamStore::new();
    let mut fan_in = config.token_dim;
    for (i, &w) in config.encoder.iter().enumerate() {
        init_block(&mut p, &format!("enc.{i}"), fan_in, w, &mut rng);
        fan_in = w;
    }
    init_linear(&mut p, "enc.head", fan_in, 2 * config.latent_dim, &mut rng);
    let mut fan_in = config.latent_dim;
    for (i, &w) in config.decoder.iter().enumerate() {
        init_block(&mut p, &format!("dec.{i}"), fan_in, w, &mut rng);
        fan_in = w;
    }
    init_linear(&mut p, "dec.head", fan_in, config.token_dim, &mut rng);
    Ok(p)
}

/// Shared per-forward inputs: positional features and the sequence layout of
/// the stacked batch.
struct Layout {
    pos: Var,
    n: usize,
    batch: usize,
}

fn repeat_rows(g: &mut Graph, x: Var, times: usize) -> Result<Var> {
    if times == 1 {
        return Ok(x);
    }
    Ok(g.concat_rows(&vec![x; times])?)
}

fn block(g: &mut Graph, p: &Bound, name: &str, x: Var, layout: &Layout, head_width: usize) -> Result<Var> {
    let h = linear(g, p, &format!("{name}.in"), x)?;
    let m = layer_norm(g, p, &format!("{name}.ln1"), h)?;
    let m = g.silu(m)?;
    let m = linear(g, p, &format!("{name}.mlp"), m)?;
    let pe = linear(g, p, &format!("{name}.pos"), layout.pos)?;
    let pe = repeat_rows(g, pe, layout.batch)?;
    let h = g.add(h, m)?;
    let h = g.add(h, pe)?;
    let width = g.value(h).cols();
    let a = layer_norm(g, p, &format!("{name}.ln2"), h)?;
    let qkv = linear(g, p, &format!("{name}.qkv"), a)?;
    let att = Attention {
        heads: heads_for(width, head_width),
        qk_norm: false,
    };
    let mut outs = Vec::with_capacity(layout.batch);
    for b in 0..layout.batch {
        let rows = g.slice_rows(qkv, b * layout.n, layout.n)?;
        let q = g.slice_cols(rows, 0, width)?;
        let k = g.slice_cols(rows, width, width)?;
        let v = g.slice_cols(rows, 2 * width, width)?;
        outs.push(att.forward(g, q, k, v, None, None)?);
    }
    let o = if outs.len() == 1 { outs[0] } else { g.concat_rows(&outs)? };
    let o = linear(g, p, &format!("{name}.out"), o)?;
    Ok(g.add(h, o)?)
}

fn encode_graph(g: &mut Graph, p: &Bound, config: &CompressorConfig, x: Var, layout: &Layout) -> Result<(Var, Var)> {
    let mut h = x;
    for i in 0..config.encoder.len() {
        h = block(g, p, &format!("enc.{i}"), h, layout, config.head_width)?;
    }
    let out = linear(g, p, "enc.head", h)?;
    let mean = g.slice_cols(out, 0, config.latent_dim)?;
    let log_var = g.slice_cols(out, config.latent_dim, config.latent_dim)?;
    Ok((mean, log_var))
}

fn decode_graph(g: &mut Graph, p: &Bound, config: &CompressorConfig, z: Var, layout: &Layout) -> Result<Var> {
    let mut h = z;
    for i in 0..config.decoder.len() {
        h = block(g, p, &format!("dec.{i}"), h, layout, config.head_width)?;
    }
    linear(g, p, "dec.head", h)
}

fn check(t: &Tensor, what: &'static str, n: usize, width: usize) -> Result<()> {
    let (rows, cols) = t.dims2()?;
    if cols != width {
        return Err(CoreError::Width {
            what,
            expected: width,
            got: cols,
        });
    }
    if rows != n {
        return Err(CoreError::Width {
            what: "rows vs query points",
            expected: n,
            got: rows,
        });
    }
    Ok(())
}

fn layout(g: &mut Graph, coords: &[f64], batch: usize) -> Layout {
    let n = coords.len() / 3;
    Layout {
        pos: g.constant(point_features(coords, POS_FREQS)),
        n,
        batch,
    }
}

/// Posterior of every token; `coords` holds the `N` query points row-major.
pub fn encode(params: &ParamStore, config: &CompressorConfig, tokens: &Tensor, coords: &[f64]) -> Result<LatentSet> {
    check(tokens, "token width", coords.len() / 3, config.token_dim)?;
    let mut g = Graph::new();
    let p = g.bind(params, &[]);
    let lay = layout(&mut g, coords, 1);
    let x = g.constant(tokens.clone());
    let (mean, log_var) = encode_graph(&mut g, &p, config, x, &lay)?;
    Ok(LatentSet {
        mean: g.value(mean).clone(),
        log_var: g.value(log_var).clone(),
    })
}

pub fn decode(params: &ParamStore, config: &CompressorConfig, latents: &Tensor, coords: &[f64]) -> Result<Tensor> {
    check(latents, "latent width", coords.len() / 3, config.latent_dim)?;
    let mut g = Graph::new();
    let p = g.bind(params, &[]);
    let lay = layout(&mut g, coords, 1);
    let z = g.constant(latents.clone());
    let out = decode_graph(&mut g, &p, config, z, &lay)?;
    Ok(g.value(out).clone())
}

/// `λ1 · mean|recon − tokens| + λ2 · mean KL(N(mean, exp(log_var)) ‖ N(0, 1))`.
pub fn compressor_loss_graph(
    g: &mut Graph,
    tokens: Var,
    recon: Var,
    mean: Var,
    log_var: Var,
    lambda1: f64,
    lambda2: f64,
) -> Result<(Var, Var, Var)> {
    let l1 = g.l1(recon, tokens)?;
    let mu2 = g.square(mean)?;
    let var = g.exp(log_var)?;
    let kl = g.add(mu2, var)?;
    let kl = g.sub(kl, log_var)?;
    let kl = g.add_scalar(kl, -1.0)?;
    let kl = g.mean(kl)?;
    let kl = g.scale(kl, 0.5)?;
    let a = g.scale(l1, lambda1)?;
    let b = g.scale(kl, lambda2)?;
    Ok((g.add(a, b)?, l1, kl))
}

/// Value of the compressor objective.
pub fn compressor_loss(
    tokens: &Tensor,
    recon: &Tensor,
    latents: &LatentSet,
    lambda1: f64,
    lambda2: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let t = g.constant(tokens.clone());
    let r = g.constant(recon.clone());
    let m = g.constant(latents.mean.clone());
    let lv = g.constant(latents.log_var.clone());
    let (loss, _, _) = compressor_loss_graph(&mut g, t, r, m, lv, lambda1, lambda2)?;
    Ok(g.value(loss).item()?)
}

/// Mean absolute error over the rows where `mask` is set.
pub fn masked_l1(recon: &Tensor, tokens: &Tensor, mask: &[bool]) -> Result<f64> {
    let (n, d) = tokens.dims2()?;
    check(recon, "reconstruction width", n, d)?;
    if mask.len() != n {
        return Err(invalid("mask length differs from token rows"));
    }
    let mut sum = 0.0;
    let mut rows = 0usize;
    for i in (0..n).filter(|&i| mask[i]) {
        sum += recon.row(i).iter().zip(tokens.row(i)).map(|(a, b)| (a - b).abs()).sum::<f64>();
        rows += 1;
    }
    if rows == 0 {
        return Err(invalid("no valid rows"));
    }
    Ok(sum / (rows * d) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompressorStep {
    pub step: u64,
    pub loss: f64,
    pub l1: f64,
    pub kl: f64,
    pub lambda2: f64,
    pub lr: f64,
}

/// Optimizer state of a compressor run; `step` advances by one per update and
/// fully determines the next batch and noise draws.
#[derive(Clone, Debug, PartialEq)]
pub struct CompressorTrainer {
    pub config: CompressorConfig,
    pub seed: u64,
    pub params: ParamStore,
    pub adam: AdamState,
    pub step: u64,
}

impl CompressorTrainer {
    pub fn new(config: CompressorConfig, seed: u64) -> Result<Self> {
        let params = init_compressor(&config, seed)?;
        Ok(Self {
            config,
            seed,
            params,
            adam: AdamState::default(),
            step: 0,
        })
    }

    /// One update on a batch drawn from `data` (standardized token matrices).
    pub fn train_step(&mut self, data: &[Tensor], coords: &[f64]) -> Result<CompressorStep> {
        if data.is_empty() {
            return Err(invalid("compressor training needs at least one identity"));
        }
        let n = coords.len() / 3;
        let cfg = &self.config;
        let stream = SeedStream::new(self.seed).derive("compressor").index(self.step);
        let mut rng = stream.derive("batch").rng();
        let picks: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..data.len())).collect();
        let mut rows = Vec::with_capacity(cfg.batch * n * cfg.token_dim);
        for &i in &picks {
            check(&data[i], "token width", n, cfg.token_dim)?;
            rows.extend_from_slice(data[i].data());
        }
        let x = Tensor::matrix(cfg.batch * n, cfg.token_dim, rows)?;
        let eps = Tensor::randn(&[cfg.batch * n, cfg.latent_dim], 1.0, &mut stream.derive("eps").rng());

        let lambda2 = cfg.lambda2(self.step);
        let lr = cfg.learning_rate(self.step);
        let mut g = Graph::new();
        let p = g.bind(&self.params, &[]);
        let lay = layout(&mut g, coords, cfg.batch);
        let xv = g.constant(x);
        let (mean, log_var) = encode_graph(&mut g, &p, cfg, xv, &lay)?;
        let std = g.scale(log_var, 0.5)?;
        let std = g.exp(std)?;
        let e = g.constant(eps);
        let noise = g.mul(std, e)?;
        let z = g.add(mean, noise)?;
        let recon = decode_graph(&mut g, &p, cfg, z, &lay)?;
        let (loss, l1, kl) = compressor_loss_graph(&mut g, xv, recon, mean, log_var, cfg.lambda1, lambda2)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(CoreError::Diverged { step: self.step });
        }
        let grads = g.backward(loss)?.collect(&p);
        adam_step(&mut self.params, &grads, &mut self.adam, lr, AdamConfig::default())?;
        let out = CompressorStep {
            step: self.step,
            loss: value,
            l1: g.value(l1).item()?,
            kl: g.value(kl).item()?,
            lambda2,
            lr,
        };
        self.step += 1;
        Ok(out)
    }
}
