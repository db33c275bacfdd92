//! Finite-difference checks for every differentiable tape operation.

use glca_numerics::gradcheck::check;
use glca_numerics::{Graph, Result, SeedStream, Tensor, Var};
use proptest::prelude::*;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const POINTS: u64 = 10;

fn randn(shape: &[usize], seed: SeedStream) -> Tensor {
    Tensor::randn(shape, 1.0, &mut seed.rng())
}

fn positive(shape: &[usize], seed: SeedStream) -> Tensor {
    randn(shape, seed).map(|v| 0.5 + v.abs())
}

/// Reduces an arbitrary tensor to a scalar through a fixed random weighting so
/// that every output entry carries a distinct upstream gradient.
fn weighted_sum(g: &mut Graph, y: Var, seed: SeedStream) -> Result<Var> {
    let w = randn(g.value(y).shape(), seed.derive("readout"));
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn check_op<F>(name: &str, shapes: &[&[usize]], make: fn(&[usize], SeedStream) -> Tensor, op: F)
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    for point in 0..POINTS {
        let seed = SeedStream::new(0xC0FFEE).derive(name).index(point);
        let inputs: Vec<Tensor> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| make(s, seed.index(i as u64)))
            .collect();
        let report = check(&inputs, H, |g, vars| {
            let y = op(g, vars)?;
            weighted_sum(g, y, seed)
        })
        .unwrap();
        let err = report.max_relative_error();
        assert!(err < TOL, "{name} point {point}: relative error {err:e}");
    }
}

#[test]
fn matmul_family() {
    check_op("matmul", &[&[3, 4], &[4, 5]], randn, |g, v| g.matmul(v[0], v[1]));
    check_op("matmul_nt", &[&[3, 4], &[5, 4]], randn, |g, v| g.matmul_nt(v[0], v[1]));
    check_op("transpose", &[&[3, 4]], randn, |g, v| g.transpose(v[0]));
    check_op("reshape", &[&[3, 4]], randn, |g, v| g.reshape(v[0], &[2, 6]));
}

#[test]
fn elementwise_binary() {
    check_op("add", &[&[3, 4], &[3, 4]], randn, |g, v| g.add(v[0], v[1]));
    check_op("sub", &[&[3, 4], &[3, 4]], randn, |g, v| g.sub(v[0], v[1]));
    check_op("mul", &[&[3, 4], &[3, 4]], randn, |g, v| g.mul(v[0], v[1]));
    check_op("add_row", &[&[3, 4], &[4]], randn, |g, v| g.add_row(v[0], v[1]));
    check_op("mul_row", &[&[3, 4], &[1, 4]], randn, |g, v| g.mul_row(v[0], v[1]));
    check_op("mul_col", &[&[3, 4], &[3]], randn, |g, v| g.mul_col(v[0], v[1]));
}

#[test]
fn elementwise_unary() {
    check_op("scale", &[&[3, 4]], randn, |g, v| g.scale(v[0], -1.7));
    check_op("add_scalar", &[&[3, 4]], randn, |g, v| g.add_scalar(v[0], 0.3));
    check_op("silu", &[&[3, 4]], randn, |g, v| g.silu(v[0]));
    check_op("sigmoid", &[&[3, 4]], randn, |g, v| g.sigmoid(v[0]));
    check_op("exp", &[&[3, 4]], randn, |g, v| g.exp(v[0]));
    check_op("log", &[&[3, 4]], positive, |g, v| g.log(v[0]));
    check_op("square", &[&[3, 4]], randn, |g, v| g.square(v[0]));
}

#[test]
fn normalizations() {
    check_op("softmax_rows", &[&[3, 5]], randn, |g, v| g.softmax_rows(v[0]));
    check_op("layer_norm_rows", &[&[3, 5]], randn, |g, v| g.layer_norm_rows(v[0], 1e-5));
    check_op("rms_norm_rows", &[&[3, 5]], randn, |g, v| g.rms_norm_rows(v[0], 1e-6));
}

#[test]
fn structural() {
    check_op("gather_rows", &[&[4, 3]], randn, |g, v| g.gather_rows(v[0], &[2, 0, 2, 3]));
    check_op("concat_rows", &[&[2, 3], &[4, 3]], randn, |g, v| g.concat_rows(&[v[0], v[1]]));
    check_op("slice_rows", &[&[5, 3]], randn, |g, v| g.slice_rows(v[0], 1, 3));
    check_op("concat_cols", &[&[3, 2], &[3, 4]], randn, |g, v| g.concat_cols(&[v[0], v[1]]));
    check_op("slice_cols", &[&[3, 5]], randn, |g, v| g.slice_cols(v[0], 2, 2));
    check_op("replace_rows", &[&[4, 3], &[3]], randn, |g, v| {
        g.replace_rows(v[0], v[1], &[true, false, false, true])
    });
}

#[test]
fn reductions() {
    check_op("sum", &[&[3, 4]], randn, |g, v| g.sum(v[0]));
    check_op("mean", &[&[3, 4]], randn, |g, v| g.mean(v[0]));
    check_op("sum_rows", &[&[3, 4]], randn, |g, v| g.sum_rows(v[0]));
    // Random inputs never tie, so |x - y| is differentiable at every probe.
    check_op("l1", &[&[3, 4], &[3, 4]], randn, |g, v| g.l1(v[0], v[1]));
}

/// 1 → 2 → 3 → 1 network: 4 + 9 + 4 = 17 parameters.
fn mlp(g: &mut Graph, v: &[Var], x: &Tensor) -> Result<Var> {
    let x = g.constant(x.clone());
    let h = g.matmul(x, v[0])?;
    let h = g.add_row(h, v[1])?;
    let h = g.silu(h)?;
    let h = g.matmul(h, v[2])?;
    let h = g.add_row(h, v[3])?;
    let h = g.silu(h)?;
    let y = g.matmul(h, v[4])?;
    let y = g.add_row(y, v[5])?;
    let sq = g.square(y)?;
    g.mean(sq)
}

#[test]
fn three_layer_mlp_matches_central_differences() {
    let seed = SeedStream::new(17);
    let shapes: [&[usize]; 6] = [&[1, 2], &[2], &[2, 3], &[3], &[3, 1], &[1]];
    let params: Vec<Tensor> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| randn(s, seed.index(i as u64)))
        .collect();
    assert_eq!(params.iter().map(Tensor::len).sum::<usize>(), 17);
    let x = Tensor::matrix(6, 1, vec![-1.5, -0.7, -0.1, 0.4, 0.9, 1.6]).unwrap();
    let report = check(&params, H, |g, v| mlp(g, v, &x)).unwrap();
    assert!(report.max_relative_error() < TOL, "{report:?}");
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::matrix(3, 4, values).unwrap());
        let y = g.softmax_rows(x).unwrap();
        for r in 0..3 {
            let s: f64 = g.value(y).row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }
}
