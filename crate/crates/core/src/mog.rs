//! Target distribution: `N` isotropic Gaussians with means evenly spaced
//! on a circle, plus the batch assembly used by the training loop.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grad::Matrix;
use crate::scalar::Scalar;

/// Dimension of the generator's latent noise.
pub const LATENT_DIM: usize = 10;
/// Dimension of the data space.
pub const DATA_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MogSpec {
    pub class_count: usize,
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "default_std")]
    pub component_std: f64,
    #[serde(default)]
    pub phase: f64,
}

fn default_radius() -> f64 {
    0.75
}

fn default_std() -> f64 {
    0.03
}

impl MogSpec {
    pub fn new(class_count: usize) -> Self {
        Self {
            class_count,
            radius: default_radius(),
            component_std: default_std(),
            phase: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count == 0 {
            return Err(Error::config("mog.class_count", "must be at least 1"));
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return Err(Error::config("mog.radius", "must be positive"));
        }
        if !(self.component_std > 0.0 && self.component_std.is_finite()) {
            return Err(Error::config("mog.component_std", "must be positive"));
        }
        if !self.phase.is_finite() {
            return Err(Error::config("mog.phase", "must be finite"));
        }
        Ok(())
    }

    /// Component means `radius * (cos, sin)(phase + 2 pi n / N)`.
    pub fn means(&self) -> Vec<[f64; 2]> {
        let n = self.class_count as f64;
        (0..self.class_count)
            .map(|k| {
                let a = self.phase + std::f64::consts::TAU * k as f64 / n;
                [self.radius * a.cos(), self.radius * a.sin()]
            })
            .collect()
    }
}

/// Seeded pseudo-random stream owned by one run.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    /// Recorded in run metadata.
    pub const ALGORITHM: &'static str = "ChaCha8 (rand_chacha 0.9)";

    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` of the same seed.
    pub fn stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { seed, inner }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        self.inner.random_range(lo..hi)
    }

    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        items.shuffle(&mut self.inner);
    }

    /// Matrix of i.i.d. standard normals scaled by `std`.
    pub fn normal_matrix<T: Scalar>(&mut self, rows: usize, cols: usize, std: f64) -> Matrix<T> {
        Matrix::from_fn(rows, cols, |_, _| T::of(std * self.normal()))
    }
}

/// Mean of class `class` plus isotropic noise, for each of `labels`.
fn draw<T: Scalar>(spec: &MogSpec, means: &[[f64; 2]], rng: &mut Rng, labels: &[usize]) -> Matrix<T> {
    let mut x = Matrix::zeros(labels.len(), DATA_DIM);
    for (i, &y) in labels.iter().enumerate() {
        let m = means[y];
        let dx = rng.normal();
        let dy = rng.normal();
        x.set(i, 0, T::of(m[0] + spec.component_std * dx));
        x.set(i, 1, T::of(m[1] + spec.component_std * dy));
    }
    x
}

/// `batch` draws of `(x, y)` with `y` uniform over the classes.
pub fn sample_joint<T: Scalar>(spec: &MogSpec, rng: &mut Rng, batch: usize) -> (Matrix<T>, Vec<usize>) {
    let labels: Vec<usize> = (0..batch).map(|_| rng.below(spec.class_count)).collect();
    let x = draw(spec, &spec.means(), rng, &labels);
    (x, labels)
}

/// `n` draws from component `class`.
pub fn sample_class<T: Scalar>(spec: &MogSpec, rng: &mut Rng, class: usize, n: usize) -> Result<Matrix<T>> {
    if class >= spec.class_count {
        return Err(Error::Index {
            what: "class id",
            index: class,
            bound: spec.class_count,
        });
    }
    Ok(draw(spec, &spec.means(), rng, &vec![class; n]))
}

/// Standard-normal latent codes.
pub fn sample_latent<T: Scalar>(rng: &mut Rng, batch: usize) -> Matrix<T> {
    rng.normal_matrix(batch, LATENT_DIM, 1.0)
}

/// Rows of `x` under a uniform random permutation (fixed points allowed).
/// Returns the permuted batch and the permutation.
pub fn make_negatives<T: Scalar>(x: &Matrix<T>, rng: &mut Rng) -> Result<(Matrix<T>, Vec<usize>)> {
    if x.rows() < 2 {
        return Err(Error::contract(format!(
            "negative sampling needs a batch of at least 2, got {}",
            x.rows()
        )));
    }
    let mut perm: Vec<usize> = (0..x.rows()).collect();
    rng.shuffle(&mut perm);
    Ok((x.select_rows(&perm)?, perm))
}
