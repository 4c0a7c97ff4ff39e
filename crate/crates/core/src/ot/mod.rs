//! Exact empirical Wasserstein-2 distances between equal-size samples.

mod assignment;

pub use assignment::{solve_assignment, solve_with, Assignment};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Matrix;

/// `sqrt(min_p (1/n) sum_i |a_i - b_p(i)|^2)` over permutations `p`.
pub fn w2(a: &Matrix<f64>, b: &Matrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::contract(format!(
            "w2 needs equal sample counts and dimensions, got {}x{} and {}x{}",
            a.rows(),
            a.cols(),
            b.rows(),
            b.cols()
        )));
    }
    if a.rows() == 0 {
        return Err(Error::contract("w2 of empty samples"));
    }
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::contract("w2 samples have non-finite entries"));
    }
    let n = a.rows();
    let sol = if a.cols() == 2 {
        // Coordinate arrays keep the solver's inner loop free of slicing.
        let coord = |m: &Matrix<f64>, k: usize| -> Vec<f64> { (0..n).map(|i| m.get(i, k)).collect() };
        let (ax, ay, bx, by) = (coord(a, 0), coord(a, 1), coord(b, 0), coord(b, 1));
        solve_with(n, |i, j| {
            let dx = ax[i] - bx[j];
            let dy = ay[i] - by[j];
            dx * dx + dy * dy
        })
    } else {
        solve_with(n, |i, j| {
            a.row(i).iter().zip(b.row(j)).map(|(p, q)| (p - q) * (p - q)).sum()
        })
    };
    Ok((sol.total_cost.max(0.0) / n as f64).sqrt())
}

/// Pooled W2, per-class W2 and the failure flag of one generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub w2: f64,
    pub cw2: Vec<f64>,
    pub cw2_mean: f64,
    /// Some class has W2 above `epsilon`.
    pub is_failure: bool,
    pub epsilon: f64,
    pub pooled_samples: usize,
    pub per_class_samples: usize,
}

impl MetricReport {
    /// `per_class[n]` holds the data and generated samples of class `n`.
    pub fn from_samples(
        pooled_data: &Matrix<f64>,
        pooled_gen: &Matrix<f64>,
        per_class: &[(Matrix<f64>, Matrix<f64>)],
        epsilon: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::contract(format!("failure threshold must be positive, got {epsilon}")));
        }
        if per_class.is_empty() {
            return Err(Error::contract("per-class metrics need at least one class"));
        }
        let w2_pooled = w2(pooled_data, pooled_gen)?;
        let cw2 = per_class
            .iter()
            .map(|(d, g)| w2(d, g))
            .collect::<Result<Vec<_>>>()?;
        let cw2_mean = cw2.iter().sum::<f64>() / cw2.len() as f64;
        let is_failure = cw2.iter().any(|&c| c > epsilon);
        Ok(Self {
            w2: w2_pooled,
            cw2,
            cw2_mean,
            is_failure,
            epsilon,
            pooled_samples: pooled_data.rows(),
            per_class_samples: per_class[0].0.rows(),
        })
    }
}
