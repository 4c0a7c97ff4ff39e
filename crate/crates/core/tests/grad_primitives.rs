use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sona_core::grad::{Graph, Matrix, Var};
use sona_core::verify::{finite_diff_grad, relative_error};
use sona_core::Result;

type BuildFn = dyn Fn(&Graph<f64>, &[Var]) -> Result<Var>;

/// Random-weighted sum of the op output, so every output entry matters.
fn scalarize(g: &Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let (r, c) = g.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let w = Matrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0));
    let w = g.constant(w);
    let p = g.mul(out, w)?;
    Ok(g.sum(p))
}

fn eval(shapes: &[(usize, usize)], flat: &[f64], build: &BuildFn, seed: u64) -> Result<(f64, Vec<f64>)> {
    let g = Graph::new();
    let mut off = 0;
    let mut leaves = Vec::new();
    for &(r, c) in shapes {
        let m = Matrix::from_vec(r, c, flat[off..off + r * c].to_vec())?;
        leaves.push(g.leaf(m, true));
        off += r * c;
    }
    let out = build(&g, &leaves)?;
    let loss = scalarize(&g, out, seed)?;
    let value = g.item(loss)?;
    g.backward(loss)?;
    let mut grad = Vec::new();
    for (v, &(r, c)) in leaves.iter().zip(shapes) {
        match g.grad(*v) {
            Some(m) => grad.extend_from_slice(m.as_slice()),
            None => grad.extend(std::iter::repeat_n(0.0, r * c)),
        }
    }
    Ok((value, grad))
}

/// Max relative error over `points` random draws with entries whose
/// magnitude lies in [0.05, 2] (away from activation kinks).
fn max_rel_error(shapes: &[(usize, usize)], build: &BuildFn, positive: bool, points: usize) -> f64 {
    let n: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for k in 0..points {
        let x: Vec<f64> = (0..n)
            .map(|_| {
                let mag = rng.random_range(0.05..2.0);
                if positive || rng.random_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect();
        let seed = k as u64;
        let (_, analytic) = eval(shapes, &x, build, seed).unwrap();
        let numeric = finite_diff_grad(|p| eval(shapes, p, build, seed).map(|r| r.0), &x, 1e-5).unwrap();
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

macro_rules! gradcheck {
    ($name:ident, $shapes:expr, $positive:expr, |$g:ident, $v:ident| $body:expr) => {
        #[test]
        fn $name() {
            let build: Box<BuildFn> = Box::new(|$g: &Graph<f64>, $v: &[Var]| $body);
            let err = max_rel_error(&$shapes, &*build, $positive, 20);
            assert!(err < 1e-4, "{}: relative error {err:e}", stringify!($name));
        }
    };
}

gradcheck!(add_same, [(3, 4), (3, 4)], false, |g, v| g.add(v[0], v[1]));
gradcheck!(add_row_broadcast, [(3, 4), (1, 4)], false, |g, v| g.add(v[0], v[1]));
gradcheck!(sub_col_broadcast, [(3, 4), (3, 1)], false, |g, v| g.sub(v[0], v[1]));
gradcheck!(mul_scalar_broadcast, [(3, 4), (1, 1)], false, |g, v| g.mul(v[0], v[1]));
gradcheck!(mul_same, [(2, 5), (2, 5)], false, |g, v| g.mul(v[0], v[1]));
gradcheck!(div_scalar, [(3, 2), (1, 1)], true, |g, v| g.div(v[0], v[1]));
gradcheck!(div_same, [(3, 2), (3, 2)], true, |g, v| g.div(v[0], v[1]));
gradcheck!(neg_and_scale, [(2, 3)], false, |g, v| Ok(g.scale(g.neg(v[0]), 2.5)));
gradcheck!(add_scalar_const, [(2, 3)], false, |g, v| Ok(g.add_scalar(v[0], 0.7)));
gradcheck!(matmul, [(3, 4), (4, 2)], false, |g, v| g.matmul(v[0], v[1]));
gradcheck!(transpose, [(3, 4)], false, |g, v| Ok(g.transpose(v[0])));
gradcheck!(concat_rows, [(2, 3), (1, 3)], false, |g, v| g.concat_rows(&[v[0], v[1]]));
gradcheck!(concat_cols, [(2, 3), (2, 1)], false, |g, v| g.concat_cols(&[v[0], v[1]]));
gradcheck!(slice_rows, [(5, 2)], false, |g, v| g.slice_rows(v[0], 1, 4));
gradcheck!(gather_rows_repeated, [(3, 2)], false, |g, v| g.gather_rows(v[0], &[2, 0, 2, 1]));
gradcheck!(select_cols, [(3, 4)], false, |g, v| g.select_cols(v[0], &[3, 0, 1]));
gradcheck!(sum, [(3, 3)], false, |g, v| Ok(g.sum(v[0])));
gradcheck!(mean, [(3, 3)], false, |g, v| g.mean(v[0]));
gradcheck!(row_sum, [(3, 3)], false, |g, v| Ok(g.row_sum(v[0])));
gradcheck!(row_dot, [(4, 3), (4, 3)], false, |g, v| g.row_dot(v[0], v[1]));
gradcheck!(relu, [(4, 3)], false, |g, v| Ok(g.relu(v[0])));
gradcheck!(leaky_relu, [(4, 3)], false, |g, v| Ok(g.leaky_relu(v[0], 0.2)));
gradcheck!(sigmoid, [(4, 3)], false, |g, v| Ok(g.sigmoid(v[0])));
gradcheck!(log_sigmoid, [(4, 3)], false, |g, v| Ok(g.log_sigmoid(v[0])));
gradcheck!(softplus, [(4, 3)], false, |g, v| Ok(g.softplus(v[0])));
gradcheck!(exp, [(4, 3)], false, |g, v| Ok(g.exp(v[0])));
gradcheck!(log, [(4, 3)], true, |g, v| Ok(g.log(v[0])));
gradcheck!(row_norm, [(4, 3)], false, |g, v| Ok(g.row_norm(v[0])));
gradcheck!(normalize_rows, [(4, 3)], false, |g, v| g.normalize_rows(v[0]));
gradcheck!(log_sum_exp_rows, [(4, 3)], false, |g, v| Ok(g.log_sum_exp_rows(v[0])));
gradcheck!(composite_inner_product, [(1, 5), (6, 5)], false, |g, v| {
    let w = g.normalize_rows(v[0])?;
    let wt = g.transpose(w);
    let proj = g.matmul(v[1], wt)?;
    let back = g.matmul(proj, w)?;
    g.sub(v[1], back)
});

#[test]
fn mean_of_matmul_matches_finite_differences_tightly() {
    let build: Box<BuildFn> = Box::new(|g: &Graph<f64>, v: &[Var]| {
        let p = g.matmul(v[0], v[1])?;
        g.mean(p)
    });
    // `mean` is checked directly, no random weighting.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x: Vec<f64> = (0..20).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |p: &[f64]| -> Result<(f64, Vec<f64>)> {
        let g = Graph::new();
        let a = g.leaf(Matrix::from_vec(3, 4, p[..12].to_vec())?, true);
        let b = g.leaf(Matrix::from_vec(4, 2, p[12..].to_vec())?, true);
        let loss = build(&g, &[a, b])?;
        g.backward(loss)?;
        let mut grad = g.grad(a).unwrap().into_vec();
        grad.extend(g.grad(b).unwrap().into_vec());
        Ok((g.item(loss)?, grad))
    };
    let (_, analytic) = f(&x).unwrap();
    let numeric = finite_diff_grad(|p| f(p).map(|r| r.0), &x, 1e-5).unwrap();
    assert!(relative_error(&analytic, &numeric) < 1e-6);
}

#[test]
fn log_sigmoid_values_and_slope() {
    let g = Graph::<f64>::new();
    let x = g.leaf(Matrix::from_rows(&[[0.0, -50.0]]).unwrap(), true);
    let y = g.log_sigmoid(x);
    assert_eq!(g.value(y).get(0, 0), -std::f64::consts::LN_2);
    assert!((g.value(y).get(0, 1) + 50.0).abs() < 1e-12);
    let loss = g.sum(y);
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().get(0, 0), 0.5);
}

#[test]
fn square_derivative() {
    let g = Graph::<f64>::new();
    let x = g.leaf(Matrix::scalar(3.0), true);
    let y = g.mul(x, x).unwrap();
    g.backward(y).unwrap();
    assert_eq!(g.grad(x).unwrap().item().unwrap(), 6.0);
}

#[test]
fn reuse_accumulates_over_paths() {
    let g = Graph::<f64>::new();
    let x = g.leaf(Matrix::from_rows(&[[1.5, -2.0, 0.25]]).unwrap(), true);
    let twice = g.add(x, x).unwrap();
    let loss = g.sum(twice);
    g.backward(loss).unwrap();
    let via_sum = g.grad(x).unwrap();

    let h = Graph::<f64>::new();
    let x2 = h.leaf(Matrix::from_rows(&[[1.5, -2.0, 0.25]]).unwrap(), true);
    let scaled = h.scale(x2, 2.0);
    let loss2 = h.sum(scaled);
    h.backward(loss2).unwrap();
    assert_eq!(via_sum, h.grad(x2).unwrap());
}

#[test]
fn stop_gradient_is_identity_forward_and_exact_zero_backward() {
    let g = Graph::<f64>::new();
    let u = g.leaf(Matrix::from_rows(&[[0.3, -1.2], [2.0, 0.1]]).unwrap(), true);
    let w = g.leaf(Matrix::from_rows(&[[1.0], [-0.5]]).unwrap(), true);
    let s = g.stop_gradient(u);
    assert_eq!(*g.value(s), *g.value(u));
    let p = g.matmul(s, w).unwrap();
    let e = g.exp(p);
    let loss = g.sum(e);
    g.backward(loss).unwrap();
    // u only reaches the loss through the stop-gradient.
    assert!(g.grad(u).is_none());
    assert!(g.grad(w).is_some());

    // Mixed: u reaches the loss both directly and through sg; the sg path adds nothing.
    let h = Graph::<f64>::new();
    let u = h.leaf(Matrix::from_rows(&[[0.3, -1.2]]).unwrap(), true);
    let su = h.stop_gradient(u);
    let prod = h.mul(u, su).unwrap();
    let loss = h.sum(prod);
    h.backward(loss).unwrap();
    assert_eq!(h.grad(u).unwrap().as_slice(), &[0.3, -1.2]);
}

#[test]
fn backward_requires_scalar_loss() {
    let g = Graph::<f64>::new();
    let x = g.leaf(Matrix::zeros(2, 1), true);
    assert!(g.backward(x).is_err());
}

#[test]
fn shape_errors_report_both_shapes() {
    let g = Graph::<f64>::new();
    let a = g.leaf(Matrix::zeros(2, 3), true);
    let b = g.leaf(Matrix::zeros(3, 2), true);
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(err.contains("(2, 3)") && err.contains("(3, 2)"), "{err}");
}

#[test]
fn normalize_rejects_degenerate_rows() {
    let g = Graph::<f64>::new();
    let a = g.leaf(Matrix::zeros(1, 3), true);
    assert!(matches!(
        g.normalize_rows(a),
        Err(sona_core::Error::Degenerate { .. })
    ));
}

#[test]
fn f32_graph_runs() {
    let g = Graph::<f32>::new();
    let a = g.leaf(Matrix::from_rows(&[[1.0f32, 2.0], [3.0, 4.0]]).unwrap(), true);
    let b = g.matmul(a, a).unwrap();
    let loss = g.mean(b).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(a).unwrap().shape(), (2, 2));
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn normalized_rows_have_unit_norm(v in proptest::collection::vec(-1e3f64..1e3, 1..40)) {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assume!(n >= 1e-6);
            let g = Graph::<f64>::new();
            let len = v.len();
            let a = g.constant(Matrix::from_vec(1, len, v).unwrap());
            let u = g.normalize_rows(a).unwrap();
            let norm = g.value(u).norm();
            prop_assert!((norm - 1.0).abs() < 1e-12);
        }

        #[test]
        fn twice_x_equals_x_plus_x(v in proptest::collection::vec(-10f64..10.0, 1..10)) {
            let len = v.len();
            let m = Matrix::from_vec(1, len, v).unwrap();
            let g = Graph::<f64>::new();
            let x = g.leaf(m.clone(), true);
            let sq = g.mul(x, x).unwrap();
            let y = g.add(sq, sq).unwrap();
            let l = g.sum(y);
            g.backward(l).unwrap();
            let h = Graph::<f64>::new();
            let x2 = h.leaf(m, true);
            let sq2 = h.mul(x2, x2).unwrap();
            let y2 = h.scale(sq2, 2.0);
            let l2 = h.sum(y2);
            h.backward(l2).unwrap();
            prop_assert_eq!(g.grad(x).unwrap(), h.grad(x2).unwrap());
        }
    }
}

#[test]
fn activations_propagate_nan() {
    let g: Graph<'_, f64> = Graph::new();
    let x = g.constant(Matrix::from_rows(&[[f64::NAN, -1.0, 2.0]]).unwrap());
    let r = g.value(g.relu(x)).clone();
    assert!(r.get(0, 0).is_nan());
    assert_eq!((r.get(0, 1), r.get(0, 2)), (0.0, 2.0));
    let l = g.value(g.leaky_relu(x, 0.2)).clone();
    assert!(l.get(0, 0).is_nan());
}
