//! Token → splat decoders: the exact inverse of the surrogate encoding, or a
//! small MLP trained to imitate it.

use glca_numerics::{adam_step, AdamConfig, AdamState, Graph, ParamStore, SeedStream, Tensor};
use glca_splat::{
    lbs_transform, rasterize, BodyPose, Camera, GaussianSplat, Image, SPLATS_PER_POINT,
};

use crate::error::{invalid, CoreError, Result};
use crate::nn::{init_linear, linear};
use crate::template::QueryPointSet;
use crate::tokens::{splats_from_appearance, Appearance, TokenCodec, APPEARANCE_DIM};

pub const MLP_HIDDEN: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub enum Detokenizer {
    Analytic(TokenCodec),
    /// Two-layer MLP from a token to normalized appearance.
    Learned { width: usize, params: ParamStore },
}

impl Detokenizer {
    pub fn width(&self) -> usize {
        match self {
            Detokenizer::Analytic(c) => c.width(),
            Detokenizer::Learned { width, .. } => *width,
        }
    }

    pub fn appearance(&self, tokens: &Tensor) -> Result<Vec<Appearance>> {
        let (_, d) = tokens.dims2()?;
        if d != self.width() {
            return Err(CoreError::Width {
                what: "token width",
                expected: self.width(),
                got: d,
            });
        }
        match self {
            Detokenizer::Analytic(codec) => codec.decode(tokens),
            Detokenizer::Learned { params, .. } => {
                let mut g = Graph::new();
                let p = g.bind(params, &[]);
                let x = g.constant(tokens.clone());
                let y = mlp(&mut g, &p, x)?;
                let out = g.value(y);
                Ok((0..out.rows()).map(|i| Appearance::from_normalized(out.row(i))).collect())
            }
        }
    }
}

fn mlp(g: &mut Graph, p: &glca_numerics::Bound, x: glca_numerics::Var) -> Result<glca_numerics::Var> {
    let h = linear(g, p, "detok.l1", x)?;
    let h = g.silu(h)?;
    linear(g, p, "detok.l2", h)
}

/// Rest-pose splats, eight per token, in token order.
pub fn detokenize(tokens: &Tensor, detok: &Detokenizer, template: &QueryPointSet) -> Result<Vec<GaussianSplat>> {
    let (n, _) = tokens.dims2()?;
    if n != template.len() {
        return Err(CoreError::Width {
            what: "token rows",
            expected: template.len(),
            got: n,
        });
    }
    let app = detok.appearance(tokens)?;
    splats_from_appearance(template, &app)
}

/// Detokenize, skin to `pose`, and rasterize.
pub fn render_identity(
    tokens: &Tensor,
    detok: &Detokenizer,
    template: &QueryPointSet,
    pose: &BodyPose,
    camera: &Camera,
) -> Result<Image> {
    if tokens.is_empty() {
        return Err(invalid("cannot render an empty token set"));
    }
    let rest = detokenize(tokens, detok, template)?;
    let posed = lbs_transform(&rest, &template.rig, pose)?;
    debug_assert_eq!(posed.len(), template.len() * SPLATS_PER_POINT);
    Ok(rasterize(&posed, camera).image)
}

/// Fits the MLP decoder to `(token, normalized appearance)` rows with Adam on
/// the mean squared error.
pub fn train_detokenizer(
    tokens: &Tensor,
    targets: &[Appearance],
    steps: usize,
    batch: usize,
    lr: f64,
    seed: u64,
) -> Result<(Detokenizer, Vec<f64>)> {
    let (n, width) = tokens.dims2()?;
    if targets.len() != n || n == 0 {
        return Err(invalid("detokenizer training needs one target per token row"));
    }
    let stream = SeedStream::new(seed).derive("detok");
    let mut params = ParamStore::new();
    let mut rng = stream.derive("init").rng();
    init_linear(&mut params, "detok.l1", width, MLP_HIDDEN, &mut rng);
    init_linear(&mut params, "detok.l2", MLP_HIDDEN, APPEARANCE_DIM, &mut rng);
    let target = Tensor::from_rows(&targets.iter().map(|a| a.normalized()).collect::<Vec<_>>())?;
    let mut state = AdamState::default();
    let mut losses = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut rng = stream.derive("batch").index(step as u64).rng();
        let idx: Vec<usize> = (0..batch).map(|_| rand::Rng::random_range(&mut rng, 0..n)).collect();
        let mut g = Graph::new();
        let p = g.bind(&params, &[]);
        let x = g.constant(tokens.gather_rows(&idx));
        let y = g.constant(target.gather_rows(&idx));
        let pred = mlp(&mut g, &p, x)?;
        let diff = g.sub(pred, y)?;
        let sq = g.square(diff)?;
        let loss = g.mean(sq)?;
        let value = g.value(loss).item()?;
        if !value.is_finite() {
            return Err(CoreError::Diverged { step: step as u64 });
        }
        losses.push(value);
        let grads = g.backward(loss)?.collect(&p);
        adam_step(&mut params, &grads, &mut state, lr, AdamConfig::default())?;
    }
    Ok((Detokenizer::Learned { width, params }, losses))
}
