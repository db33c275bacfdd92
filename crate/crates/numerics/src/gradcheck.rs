//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numerical gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    /// Per input: `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)`.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

/// Differentiates the scalar produced by `build` with respect to each of
/// `inputs`, once on the tape and once by central differences with step `h`.
pub fn check<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        g.value(out).item()
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    let grads = g.backward(out)?;

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut probe = inputs.to_vec();
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads.get(*v).expect("leaf gradient").data().to_vec();
        let mut numeric = Vec::with_capacity(analytic.len());
        for i in 0..inputs[k].len() {
            let orig = inputs[k].data()[i];
            probe[k].data_mut()[i] = orig + h;
            let plus = eval(&probe)?;
            probe[k].data_mut()[i] = orig - h;
            let minus = eval(&probe)?;
            probe[k].data_mut()[i] = orig;
            numeric.push((plus - minus) / (2.0 * h));
        }
        relative_errors.push(relative_error(&analytic, &numeric));
    }
    Ok(GradCheck { relative_errors })
}

fn readout(g: &mut Graph, y: Var, seed: SeedStream) -> Result<Var> {
    let w = Tensor::randn(g.value(y).shape(), 1.0, &mut seed.derive("readout").rng());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

type OpBuild = fn(&mut Graph, &[Var]) -> Result<Var>;

/// Every differentiable tape operation with the input shapes it is probed at
/// and whether its inputs must be positive.
fn ops() -> Vec<(&'static str, Vec<Vec<usize>>, bool, OpBuild)> {
    vec![
        ("matmul", vec![vec![3, 4], vec![4, 5]], false, |g, v| g.matmul(v[0], v[1])),
        ("matmul_nt", vec![vec![3, 4], vec![5, 4]], false, |g, v| g.matmul_nt(v[0], v[1])),
        ("transpose", vec![vec![3, 4]], false, |g, v| g.transpose(v[0])),
        ("reshape", vec![vec![3, 4]], false, |g, v| g.reshape(v[0], &[2, 6])),
        ("add", vec![vec![3, 4], vec![3, 4]], false, |g, v| g.add(v[0], v[1])),
        ("sub", vec![vec![3, 4], vec![3, 4]], false, |g, v| g.sub(v[0], v[1])),
        ("mul", vec![vec![3, 4], vec![3, 4]], false, |g, v| g.mul(v[0], v[1])),
        ("add_row", vec![vec![3, 4], vec![4]], false, |g, v| g.add_row(v[0], v[1])),
        ("mul_row", vec![vec![3, 4], vec![1, 4]], false, |g, v| g.mul_row(v[0], v[1])),
        ("mul_col", vec![vec![3, 4], vec![3]], false, |g, v| g.mul_col(v[0], v[1])),
        ("scale", vec![vec![3, 4]], false, |g, v| g.scale(v[0], -1.7)),
        ("add_scalar", vec![vec![3, 4]], false, |g, v| g.add_scalar(v[0], 0.3)),
        ("silu", vec![vec![3, 4]], false, |g, v| g.silu(v[0])),
        ("sigmoid", vec![vec![3, 4]], false, |g, v| g.sigmoid(v[0])),
        ("exp", vec![vec![3, 4]], false, |g, v| g.exp(v[0])),
        ("log", vec![vec![3, 4]], true, |g, v| g.log(v[0])),
        ("square", vec![vec![3, 4]], false, |g, v| g.square(v[0])),
        ("softmax_rows", vec![vec![3, 5]], false, |g, v| g.softmax_rows(v[0])),
        ("layer_norm_rows", vec![vec![3, 5]], false, |g, v| g.layer_norm_rows(v[0], 1e-5)),
        ("rms_norm_rows", vec![vec![3, 5]], false, |g, v| g.rms_norm_rows(v[0], 1e-6)),
        ("gather_rows", vec![vec![4, 3]], false, |g, v| g.gather_rows(v[0], &[2, 0, 2, 3])),
        ("concat_rows", vec![vec![2, 3], vec![4, 3]], false, |g, v| g.concat_rows(&[v[0], v[1]])),
        ("slice_rows", vec![vec![5, 3]], false, |g, v| g.slice_rows(v[0], 1, 3)),
        ("concat_cols", vec![vec![3, 2], vec![3, 4]], false, |g, v| g.concat_cols(&[v[0], v[1]])),
        ("slice_cols", vec![vec![3, 5]], false, |g, v| g.slice_cols(v[0], 2, 2)),
        ("replace_rows", vec![vec![4, 3], vec![3]], false, |g, v| {
            g.replace_rows(v[0], v[1], &[true, false, false, true])
        }),
        ("sum", vec![vec![3, 4]], false, |g, v| g.sum(v[0])),
        ("mean", vec![vec![3, 4]], false, |g, v| g.mean(v[0])),
        ("sum_rows", vec![vec![3, 4]], false, |g, v| g.sum_rows(v[0])),
        ("l1", vec![vec![3, 4], vec![3, 4]], false, |g, v| g.l1(v[0], v[1])),
    ]
}

/// Worst relative error of every tape operation over `points` random probes,
/// each reduced to a scalar through a random readout.
pub fn op_suite(points: u64, h: f64) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::new();
    for (name, shapes, positive, build) in ops() {
        let mut worst: f64 = 0.0;
        for point in 0..points {
            let seed = SeedStream::new(0xC0FFEE).derive(name).index(point);
            let inputs: Vec<Tensor> = shapes
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let t = Tensor::randn(s, 1.0, &mut seed.index(i as u64).rng());
                    if positive {
                        t.map(|v| 0.5 + v.abs())
                    } else {
                        t
                    }
                })
                .collect();
            let report = check(&inputs, h, |g, vars| {
                let y = build(g, vars)?;
                readout(g, y, seed)
            })?;
            worst = worst.max(report.max_relative_error());
        }
        out.push((name, worst));
    }
    Ok(out)
}
