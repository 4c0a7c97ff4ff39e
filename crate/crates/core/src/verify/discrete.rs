//! Maximizers of two population objectives over a finite joint
//! distribution, found by gradient ascent on exact expectations.
//!
//! A free score table `f(x, y)` is ascended on the mismatch Bradley-Terry
//! objective, whose maximizer is the log gap `log p(x|y) - log p(x)` up to
//! a per-`y` constant, and on softmax cross-entropy, whose maximizer is
//! `log p(y|x)` up to a per-`x` constant. Only pairwise differences are
//! compared, so the free constants drop out.

use crate::error::{Error, Result};
use crate::grad::{Graph, Matrix, Var};
use crate::mog::Rng;

/// Probability table `p(x, y)`, `|X|` rows by `|Y|` columns.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteJoint {
    p: Vec<Vec<f64>>,
}

impl DiscreteJoint {
    pub fn new(p: Vec<Vec<f64>>) -> Result<Self> {
        let ys = p.first().map_or(0, Vec::len);
        if p.is_empty() || ys == 0 || p.iter().any(|r| r.len() != ys) {
            return Err(Error::contract("joint table must be a non-empty rectangle"));
        }
        if p.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::contract("joint table entries must be finite and non-negative"));
        }
        let total: f64 = p.iter().flatten().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::contract(format!("joint table sums to {total}, not 1")));
        }
        let joint = Self { p };
        if (0..joint.xs()).any(|x| joint.px(x) <= 0.0) || (0..joint.ys()).any(|y| joint.py(y) <= 0.0) {
            return Err(Error::contract("every marginal probability must be positive"));
        }
        Ok(joint)
    }

    /// Table with entries uniform in `[0.2, 1)`, normalized. With
    /// `uniform_y` each column is scaled to mass `1 / |Y|`.
    pub fn random(xs: usize, ys: usize, uniform_y: bool, rng: &mut Rng) -> Result<Self> {
        let mut p: Vec<Vec<f64>> = (0..xs).map(|_| (0..ys).map(|_| rng.uniform(0.2, 1.0)).collect()).collect();
        if uniform_y {
            for y in 0..ys {
                let col: f64 = p.iter().map(|r| r[y]).sum();
                for row in &mut p {
                    row[y] /= col * ys as f64;
                }
            }
        }
        let total: f64 = p.iter().flatten().sum();
        p.iter_mut().flatten().for_each(|v| *v /= total);
        Self::new(p)
    }

    pub fn xs(&self) -> usize {
        self.p.len()
    }

    pub fn ys(&self) -> usize {
        self.p[0].len()
    }

    pub fn p(&self, x: usize, y: usize) -> f64 {
        self.p[x][y]
    }

    pub fn px(&self, x: usize) -> f64 {
        self.p[x].iter().sum()
    }

    pub fn py(&self, y: usize) -> f64 {
        self.p.iter().map(|r| r[y]).sum()
    }

    /// `log p(x|y) - log p(x)`.
    pub fn log_gap(&self, x: usize, y: usize) -> f64 {
        (self.p(x, y) / self.py(y)).ln() - self.px(x).ln()
    }

    /// `log p(y|x)`.
    pub fn log_posterior(&self, x: usize, y: usize) -> f64 {
        (self.p(x, y) / self.px(x)).ln()
    }

    fn has_uniform_y(&self) -> bool {
        let u = 1.0 / self.ys() as f64;
        (0..self.ys()).all(|y| (self.py(y) - u).abs() <= 1e-12)
    }
}

/// Plain gradient ascent settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AscentConfig {
    pub rate: f64,
    pub steps: usize,
    /// Gradient norm that counts as converged.
    pub tolerance: f64,
}

impl Default for AscentConfig {
    fn default() -> Self {
        Self {
            rate: 0.5,
            steps: 20_000,
            tolerance: 1e-6,
        }
    }
}

/// Maximizes `objective(f)` over a free table, starting from zeros.
/// Stops early once the gradient norm is far below the tolerance.
fn ascend(rows: usize, cols: usize, config: &AscentConfig, objective: impl Fn(&Graph<'_, f64>, Var) -> Result<Var>) -> Result<Matrix<f64>> {
    let mut table = Matrix::zeros(rows, cols);
    let mut norm = f64::INFINITY;
    for _ in 0..config.steps {
        let g = Graph::new();
        let f = g.leaf(table.clone(), true);
        let value = objective(&g, f)?;
        g.backward(value)?;
        let grad = g.grad(f).ok_or_else(|| Error::contract("score table got no gradient"))?;
        norm = grad.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < config.tolerance * 1e-6 {
            return Ok(table);
        }
        for (t, d) in table.as_mut_slice().iter_mut().zip(grad.as_slice()) {
            *t += config.rate * d;
        }
    }
    if norm > config.tolerance {
        return Err(Error::NoConvergence(format!(
            "gradient norm {norm:e} after {} steps",
            config.steps
        )));
    }
    Ok(table)
}

/// Largest `|(f[a] - f[b]) - (t[a] - t[b])|` over the given index pairs.
fn max_pair_error(pairs: impl Iterator<Item = ((usize, usize), (usize, usize))>, f: &Matrix<f64>, target: impl Fn(usize, usize) -> f64) -> f64 {
    pairs
        .map(|((x1, y1), (x2, y2))| {
            let got = f.get(x1, y1) - f.get(x2, y2);
            let want = target(x1, y1) - target(x2, y2);
            (got - want).abs()
        })
        .fold(0.0, f64::max)
}

/// Exact expectation of the mismatch objective
/// `E_{(x,y) ~ p(x,y), x' ~ p(x)} log sigmoid(f(x,y) - f(x',y))`, with the
/// table flattened to a column at `x * |Y| + y`.
fn bt_mismatch_value(g: &Graph<'_, f64>, f: Var, joint: &DiscreteJoint) -> Result<Var> {
    let (xs, ys) = (joint.xs(), joint.ys());
    let (mut win, mut lose, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for x in 0..xs {
        for y in 0..ys {
            for xl in 0..xs {
                win.push(x * ys + y);
                lose.push(xl * ys + y);
                w.push(joint.p(x, y) * joint.px(xl));
            }
        }
    }
    let m = g.sub(g.gather_rows(f, &win)?, g.gather_rows(f, &lose)?)?;
    let weights = g.constant(Matrix::from_vec(w.len(), 1, w)?);
    Ok(g.sum(g.mul(weights, g.log_sigmoid(m))?))
}

/// Exact expectation of softmax cross-entropy at temperature 1,
/// `E_{p(x,y)} [f(x,y) - log sum_y' exp f(x,y')]`.
fn cross_entropy_value(g: &Graph<'_, f64>, f: Var, joint: &DiscreteJoint) -> Result<Var> {
    let (xs, ys) = (joint.xs(), joint.ys());
    let p = Matrix::from_vec(xs, ys, (0..xs).flat_map(|x| (0..ys).map(move |y| (x, y))).map(|(x, y)| joint.p(x, y)).collect())?;
    let px = Matrix::from_vec(xs, 1, (0..xs).map(|x| joint.px(x)).collect())?;
    let picked = g.sum(g.mul(g.constant(p), f)?);
    let norm = g.sum(g.mul(g.constant(px), g.log_sum_exp_rows(f))?);
    g.sub(picked, norm)
}

/// Ascends the mismatch objective and returns the largest error of the
/// within-`y` differences against the log gap.
pub fn log_gap_maximizer_error(joint: &DiscreteJoint, config: &AscentConfig) -> Result<f64> {
    let (xs, ys) = (joint.xs(), joint.ys());
    let column = ascend(xs * ys, 1, config, |g, f| bt_mismatch_value(g, f, joint))?;
    let f = Matrix::from_vec(xs, ys, column.as_slice().to_vec())?;
    let pairs = (0..ys).flat_map(move |y| (0..xs).flat_map(move |a| (0..xs).map(move |b| ((a, y), (b, y)))));
    Ok(max_pair_error(pairs, &f, |x, y| joint.log_gap(x, y)))
}

/// Ascends cross-entropy and returns the largest error of the within-`x`
/// differences against `log p(y|x)`. Requires uniform `p(y)`.
pub fn log_posterior_maximizer_error(joint: &DiscreteJoint, config: &AscentConfig) -> Result<f64> {
    if !joint.has_uniform_y() {
        return Err(Error::contract("cross-entropy oracle needs a uniform label marginal"));
    }
    let f = ascend(joint.xs(), joint.ys(), config, |g, f| cross_entropy_value(g, f, joint))?;
    let (xs, ys) = (joint.xs(), joint.ys());
    let pairs = (0..xs).flat_map(move |x| (0..ys).flat_map(move |a| (0..ys).map(move |b| ((x, a), (x, b)))));
    Ok(max_pair_error(pairs, &f, |x, y| joint.log_posterior(x, y)))
}

/// Score table maximizing cross-entropy, for symmetry checks.
pub fn cross_entropy_maximizer(joint: &DiscreteJoint, config: &AscentConfig) -> Result<Matrix<f64>> {
    ascend(joint.xs(), joint.ys(), config, |g, f| cross_entropy_value(g, f, joint))
}
