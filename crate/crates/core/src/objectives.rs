//! Loss functions: the slicing-adversarial pair, the Bradley-Terry
//! objectives, the non-saturating GAN baseline, a softmax cross-entropy
//! oracle loss and the learnable weights that scale the log-sigmoids.
//!
//! Maximization objectives are returned as values to maximize; the
//! `total_*` functions return losses to minimize.

use crate::error::{Error, Result};
use crate::grad::{Graph, Matrix, ParamGroup, ParamId, ParamStore, Var};
use crate::nets::{FeatureNet, PdganHead, SonaHead, SonaVars};
use crate::scalar::{log_sigmoid, softplus, Scalar};

/// `log sigmoid(s t) / s`.
pub fn scaled_log_sigmoid(s: f64, t: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::contract(format!("log-sigmoid scale must be positive, got {s}")));
    }
    Ok(log_sigmoid(s * t) / s)
}

/// Closed-form `d/ds [log sigmoid(s d) / s]`.
pub fn scaled_log_sigmoid_ds(s: f64, delta: f64) -> f64 {
    let sd = s * delta;
    // sd / (e^{sd} + 1) written to avoid overflow for large sd.
    let ratio = if sd > 0.0 {
        sd * (-sd).exp() / (1.0 + (-sd).exp())
    } else {
        sd / (sd.exp() + 1.0)
    };
    (ratio - log_sigmoid(sd)) / (s * s)
}

/// Elementwise `log sigmoid(s t) / s` with a `1 x 1` scale `s`.
pub fn scaled_log_sigmoid_var<T: Scalar>(g: &Graph<'_, T>, s: Var, t: Var) -> Result<Var> {
    let st = g.mul(t, s)?;
    let ls = g.log_sigmoid(st);
    g.div(ls, s)
}

/// `softplus(raw) / ||softplus(raw)||`.
pub fn effective_weights(raws: &[f64]) -> Vec<f64> {
    let sp: Vec<f64> = raws.iter().map(|&r| softplus(r)).collect();
    let norm = sp.iter().map(|v| v * v).sum::<f64>().sqrt();
    sp.into_iter().map(|v| v / norm).collect()
}

/// Graph form of [`effective_weights`] on a `1 x k` row.
pub fn effective_weights_var<T: Scalar>(g: &Graph<'_, T>, raw: Var) -> Result<Var> {
    g.normalize_rows(g.softplus(raw))
}

/// Learnable raw weights, one per scaled objective. Raws start at zero,
/// so the effective weights start equal.
#[derive(Clone, Debug)]
pub struct WeightTriplet {
    raw: ParamId,
    terms: usize,
}

impl WeightTriplet {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, terms: usize) -> Result<Self> {
        if terms == 0 {
            return Err(Error::contract("weight set needs at least one term"));
        }
        let raw = store.add("weights.raw", ParamGroup::Weighting, Matrix::zeros(1, terms));
        Ok(Self { raw, terms })
    }

    pub fn raw_id(&self) -> ParamId {
        self.raw
    }

    pub fn terms(&self) -> usize {
        self.terms
    }

    /// Effective weights as a `1 x k` node.
    pub fn bind<T: Scalar>(&self, g: &Graph<'_, T>) -> Result<Var> {
        effective_weights_var(g, g.param(self.raw))
    }

    /// Entry `k` of bound weights, as a `1 x 1` node.
    pub fn term<T: Scalar>(g: &Graph<'_, T>, weights: Var, k: usize) -> Result<Var> {
        let w = g.transpose(weights);
        g.slice_rows(w, k, k + 1)
    }

    pub fn values<T: Scalar>(&self, store: &ParamStore<T>) -> Vec<f64> {
        let raws: Vec<f64> = store.value(self.raw).as_slice().iter().map(|v| v.as_f64()).collect();
        effective_weights(&raws)
    }
}

/// Naturalness and alignment scores of one batch, each `batch x 1`.
#[derive(Clone, Copy, Debug)]
pub struct Scores {
    pub naturalness: Var,
    pub alignment: Var,
}

impl Scores {
    pub fn of<T: Scalar>(g: &Graph<'_, T>, vars: &SonaVars, h: Var, y: &[usize]) -> Result<Self> {
        Ok(Self {
            naturalness: vars.naturalness(g, h)?,
            alignment: vars.alignment(g, h, y)?,
        })
    }
}

/// Slicing-adversarial objective to maximize; the sum of the two parts
/// returned by [`v_san_parts`].
pub fn v_san<T: Scalar>(g: &Graph<'_, T>, vars: &SonaVars, h_data: Var, h_gen: Var, s: Var) -> Result<Var> {
    let (direction, gan) = v_san_parts(g, vars, h_data, h_gen, s)?;
    g.add(direction, gan)
}

/// The direction terms `mean <omega, sg(h)>` over data minus generated,
/// which train only `omega`, and the GAN term `log sigmoid(f)` on data plus
/// `log sigmoid(-f)` on generated with `f = <sg(omega), h> + b`, which
/// trains only `h` and `b`. The GAN log-sigmoids are scaled by `s`.
pub fn v_san_parts<T: Scalar>(g: &Graph<'_, T>, vars: &SonaVars, h_data: Var, h_gen: Var, s: Var) -> Result<(Var, Var)> {
    let dir_d = g.mean(vars.project(g, g.stop_gradient(h_data))?)?;
    let dir_g = g.mean(vars.project(g, g.stop_gradient(h_gen))?)?;
    let direction = g.sub(dir_d, dir_g)?;

    let frozen = SonaVars {
        omega: g.stop_gradient(vars.omega),
        ..*vars
    };
    let f_d = frozen.naturalness(g, h_data)?;
    let f_g = frozen.naturalness(g, h_gen)?;
    let real = g.mean(scaled_log_sigmoid_var(g, s, f_d)?)?;
    let fake = g.mean(scaled_log_sigmoid_var(g, s, g.neg(f_g))?)?;
    Ok((direction, g.add(real, fake)?))
}

/// `-mean <omega, h(x_gen)>`, to minimize.
pub fn j_san<T: Scalar>(g: &Graph<'_, T>, vars: &SonaVars, h_gen: Var) -> Result<Var> {
    let p = g.mean(vars.project(g, h_gen)?)?;
    Ok(g.neg(p))
}

/// `f_N^sg(w) + f_A(w) - f_N^sg(l) - f_A(l)`.
fn preference_margin<T: Scalar>(g: &Graph<'_, T>, winner: Scores, loser: Scores) -> Result<Var> {
    let w = g.add(g.stop_gradient(winner.naturalness), winner.alignment)?;
    let l = g.add(g.stop_gradient(loser.naturalness), loser.alignment)?;
    g.sub(w, l)
}

/// Bradley-Terry objective to maximize: `mean log sigmoid(s m) / s` over
/// the margins `m` between winners and losers. Naturalness scores enter
/// through a stop-gradient, so only the alignment path is trained.
pub fn v_bt<T: Scalar>(g: &Graph<'_, T>, winner: Scores, loser: Scores, s: Var) -> Result<Var> {
    let m = preference_margin(g, winner, loser)?;
    g.mean(scaled_log_sigmoid_var(g, s, m)?)
}

/// Real pairs beat generated samples with the same label.
pub fn v_bt_cond<T: Scalar>(g: &Graph<'_, T>, data: Scores, gen: Scores, s: Var) -> Result<Var> {
    v_bt(g, data, gen, s)
}

/// Real pairs beat real samples drawn from the marginal (the permuted
/// batch) scored under the winner's label.
pub fn v_bt_mm<T: Scalar>(g: &Graph<'_, T>, data: Scores, neg: Scores, s: Var) -> Result<Var> {
    v_bt(g, data, neg, s)
}

/// Generator loss `-mean log sigmoid(f_N^sg(x_g) + f_A(x_g) - f_N(x_d) - f_A(x_d))`.
/// Unscaled.
pub fn j_bt_cond<T: Scalar>(g: &Graph<'_, T>, gen: Scores, data: Scores) -> Result<Var> {
    let w = g.add(g.stop_gradient(gen.naturalness), gen.alignment)?;
    let l = g.add(data.naturalness, data.alignment)?;
    let m = g.sub(w, l)?;
    let v = g.mean(g.log_sigmoid(m))?;
    Ok(g.neg(v))
}

/// Softmax cross-entropy over classes, to maximize:
/// `mean_i [scores[i, y_i] / tau - log sum_y' exp(scores[i, y'] / tau)]`.
pub fn v_ce<T: Scalar>(g: &Graph<'_, T>, scores: Var, y: &[usize], tau: f64) -> Result<Var> {
    if !(tau > 0.0) {
        return Err(Error::contract(format!("temperature must be positive, got {tau}")));
    }
    let z = g.scale(scores, T::of(1.0 / tau));
    let picked = g.select_cols(z, y)?;
    let lse = g.log_sum_exp_rows(z);
    g.mean(g.sub(picked, lse)?)
}

/// Non-saturating GAN pair: the value to maximize,
/// `mean log sigmoid(f_data) + mean log sigmoid(-f_gen)`, and the
/// generator loss `-mean log sigmoid(f_gen)`.
pub fn gan_nonsaturating<T: Scalar>(g: &Graph<'_, T>, f_data: Var, f_gen: Var) -> Result<(Var, Var)> {
    let real = g.mean(g.log_sigmoid(f_data))?;
    let fake = g.mean(g.log_sigmoid(g.neg(f_gen)))?;
    let max = g.add(real, fake)?;
    let min = g.neg(g.mean(g.log_sigmoid(f_gen))?);
    Ok((max, min))
}

/// Data, negative and generated batches sharing one label vector.
#[derive(Clone, Debug)]
pub struct BatchTriple<T> {
    pub x_data: Matrix<T>,
    /// Row `i` is `x_data[perm[i]]`.
    pub neg_perm: Vec<usize>,
    pub x_gen: Matrix<T>,
    pub y: Vec<usize>,
}

impl<T: Scalar> BatchTriple<T> {
    pub fn new(x_data: Matrix<T>, neg_perm: Vec<usize>, x_gen: Matrix<T>, y: Vec<usize>) -> Result<Self> {
        let b = y.len();
        if x_data.rows() != b || x_gen.rows() != b || neg_perm.len() != b {
            return Err(Error::contract(format!(
                "batch sizes differ: data {}, negatives {}, generated {}, labels {b}",
                x_data.rows(),
                neg_perm.len(),
                x_gen.rows()
            )));
        }
        if let Some(&bad) = neg_perm.iter().find(|&&p| p >= b) {
            return Err(Error::Index {
                what: "negative permutation",
                index: bad,
                bound: b,
            });
        }
        Ok(Self { x_data, neg_perm, x_gen, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn x_neg(&self) -> Result<Matrix<T>> {
        self.x_data.select_rows(&self.neg_perm)
    }
}

/// Discriminator of the full method: features, the decomposed head and
/// the learnable weights. With `mismatch` off the weights have two terms
/// and the mismatch objective is dropped. With `alignment` off only the
/// slicing-adversarial pair is used.
#[derive(Clone, Debug)]
pub struct SonaDiscriminator {
    pub features: FeatureNet,
    pub head: SonaHead,
    pub weights: WeightTriplet,
    pub mismatch: bool,
    pub alignment: bool,
}

/// Terms of one discriminator objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct DiscriminatorLoss {
    /// Loss to minimize: minus the sum of the maximized terms.
    pub total: Var,
    pub v_san: Var,
    pub v_bt_cond: Option<Var>,
    pub v_bt_mm: Option<Var>,
    /// Effective weights, `1 x k`.
    pub weights: Var,
}

/// Terms of one generator objective evaluation.
#[derive(Clone, Copy, Debug)]
pub struct GeneratorLoss {
    pub total: Var,
    pub j_san: Var,
    pub j_bt_cond: Option<Var>,
}

impl SonaDiscriminator {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        classes: usize,
        mismatch: bool,
        alignment: bool,
        rng: &mut crate::mog::Rng,
    ) -> Result<Self> {
        let features = FeatureNet::new(store, rng)?;
        let head = SonaHead::new(store, classes, features.dim(), rng)?;
        let terms = match (alignment, mismatch) {
            (false, _) => 1,
            (true, false) => 2,
            (true, true) => 3,
        };
        let weights = WeightTriplet::new(store, terms)?;
        Ok(Self {
            features,
            head,
            weights,
            mismatch,
            alignment,
        })
    }

    /// `-(V_SAN + V_BT-c + V_BT-m)` on `triple`, generated samples given as
    /// a constant.
    pub fn total_discriminator_loss<T: Scalar>(&self, g: &Graph<'_, T>, triple: &BatchTriple<T>) -> Result<DiscriminatorLoss> {
        let b = triple.len();
        let x = g.constant(stack(&triple.x_data, &triple.x_gen)?);
        let h = self.features.forward(g, x)?;
        let h_data = g.slice_rows(h, 0, b)?;
        let h_gen = g.slice_rows(h, b, 2 * b)?;
        let vars = self.head.bind(g)?;
        let weights = self.weights.bind(g)?;

        let v_san = v_san(g, &vars, h_data, h_gen, WeightTriplet::term(g, weights, 0)?)?;
        let mut sum = v_san;
        let (mut btc, mut btm) = (None, None);
        if self.alignment {
            let data = Scores::of(g, &vars, h_data, &triple.y)?;
            let gen = Scores::of(g, &vars, h_gen, &triple.y)?;
            let c = v_bt_cond(g, data, gen, WeightTriplet::term(g, weights, 1)?)?;
            sum = g.add(sum, c)?;
            btc = Some(c);
            if self.mismatch {
                let h_neg = g.gather_rows(h_data, &triple.neg_perm)?;
                let neg = Scores::of(g, &vars, h_neg, &triple.y)?;
                let m = v_bt_mm(g, data, neg, WeightTriplet::term(g, weights, 2)?)?;
                sum = g.add(sum, m)?;
                btm = Some(m);
            }
        }
        Ok(DiscriminatorLoss {
            total: g.neg(sum),
            v_san,
            v_bt_cond: btc,
            v_bt_mm: btm,
            weights,
        })
    }

    /// `J_SAN + J_BT-c` for generated samples `x_gen` (a node that may
    /// carry generator gradients) against real `x_data`.
    pub fn total_generator_loss<T: Scalar>(
        &self,
        g: &Graph<'_, T>,
        x_gen: Var,
        x_data: &Matrix<T>,
        y: &[usize],
    ) -> Result<GeneratorLoss> {
        let b = y.len();
        let x = g.concat_rows(&[x_gen, g.constant(x_data.clone())])?;
        let h = self.features.forward(g, x)?;
        let h_gen = g.slice_rows(h, 0, b)?;
        let vars = self.head.bind(g)?;
        let j_san = j_san(g, &vars, h_gen)?;
        if !self.alignment {
            return Ok(GeneratorLoss {
                total: j_san,
                j_san,
                j_bt_cond: None,
            });
        }
        let h_data = g.slice_rows(h, b, 2 * b)?;
        let gen = Scores::of(g, &vars, h_gen, y)?;
        let data = Scores::of(g, &vars, h_data, y)?;
        let j = j_bt_cond(g, gen, data)?;
        Ok(GeneratorLoss {
            total: g.add(j_san, j)?,
            j_san,
            j_bt_cond: Some(j),
        })
    }
}

/// Projection-discriminator baseline trained with the non-saturating pair.
#[derive(Clone, Debug)]
pub struct PdganDiscriminator {
    pub features: FeatureNet,
    pub head: PdganHead,
}

impl PdganDiscriminator {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, classes: usize, rng: &mut crate::mog::Rng) -> Result<Self> {
        let features = FeatureNet::new(store, rng)?;
        let head = PdganHead::new(store, classes, features.dim(), rng)?;
        Ok(Self { features, head })
    }

    /// Minus the non-saturating value on real and generated pairs.
    pub fn discriminator_loss<T: Scalar>(&self, g: &Graph<'_, T>, x_data: &Matrix<T>, x_gen: &Matrix<T>, y: &[usize]) -> Result<Var> {
        let b = y.len();
        let x = g.constant(stack(x_data, x_gen)?);
        let h = self.features.forward(g, x)?;
        let yy: Vec<usize> = y.iter().chain(y).copied().collect();
        let f = self.head.score(g, h, &yy)?;
        let (max, _) = gan_nonsaturating(g, g.slice_rows(f, 0, b)?, g.slice_rows(f, b, 2 * b)?)?;
        Ok(g.neg(max))
    }

    pub fn generator_loss<T: Scalar>(&self, g: &Graph<'_, T>, x_gen: Var, y: &[usize]) -> Result<Var> {
        let h = self.features.forward(g, x_gen)?;
        let f = self.head.score(g, h, y)?;
        Ok(g.neg(g.mean(g.log_sigmoid(f))?))
    }
}

fn stack<T: Scalar>(a: &Matrix<T>, b: &Matrix<T>) -> Result<Matrix<T>> {
    if a.cols() != b.cols() {
        return Err(Error::Dimension {
            op: "stack",
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    let mut data = Vec::with_capacity(a.len() + b.len());
    data.extend_from_slice(a.as_slice());
    data.extend_from_slice(b.as_slice());
    Matrix::from_vec(a.rows() + b.rows(), a.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn scaled_log_sigmoid_reference_values() {
        assert!((scaled_log_sigmoid(1.0, 0.0).unwrap() + LN_2).abs() < 1e-15);
        assert!((scaled_log_sigmoid(0.5, 2.0).unwrap() + 0.62652338).abs() < 1e-8);
        for s in [0.1, 0.3, 0.7, 2.0] {
            assert!((scaled_log_sigmoid(s, 0.0).unwrap() + LN_2 / s).abs() < 1e-12);
        }
        for t in [-30.0, -1.5, 0.0, 0.25, 40.0] {
            assert_eq!(scaled_log_sigmoid(1.0, t).unwrap(), log_sigmoid(t));
        }
        assert!(scaled_log_sigmoid(0.0, 1.0).is_err());
        assert!(scaled_log_sigmoid(-1.0, 1.0).is_err());
    }

    #[test]
    fn effective_weight_examples() {
        let w = effective_weights(&[0.0, 0.0, 0.0]);
        for v in &w {
            assert!((v - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        }
        assert_eq!(effective_weights(&[4.2, 4.2, 4.2]), effective_weights(&[-1.0, -1.0, -1.0]));
        let w = effective_weights(&[10.0, 0.0, 0.0]);
        let sp10 = 10.0000453988992;
        let expect = sp10 / (sp10 * sp10 + 2.0 * LN_2 * LN_2).sqrt();
        assert!((w[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn derivative_spot_value() {
        assert!((scaled_log_sigmoid_ds(0.5, 0.0) - 4.0 * LN_2).abs() < 1e-12);
        assert!(scaled_log_sigmoid_ds(0.5, 1e4).is_finite());
        assert!(scaled_log_sigmoid_ds(0.5, -1e4).is_finite());
    }

    #[test]
    fn nonsaturating_at_zero() {
        let g = Graph::<f64>::new();
        let z = g.constant(Matrix::zeros(4, 1));
        let (max, min) = gan_nonsaturating(&g, z, z).unwrap();
        assert!((g.item(max).unwrap() + 2.0 * LN_2).abs() < 1e-15);
        assert!((g.item(min).unwrap() - LN_2).abs() < 1e-15);
        let d = g.constant(Matrix::filled(4, 1, 60.0));
        let f = g.constant(Matrix::filled(4, 1, -60.0));
        let (max, _) = gan_nonsaturating(&g, d, f).unwrap();
        assert!(g.item(max).unwrap().abs() < 1e-20);
    }

    #[test]
    fn cross_entropy_limits() {
        let g = Graph::<f64>::new();
        let s = g.constant(Matrix::filled(3, 4, 0.7));
        let v = v_ce(&g, s, &[0, 3, 1], 1.0).unwrap();
        assert!((g.item(v).unwrap() + 4f64.ln()).abs() < 1e-14);
        let s = g.constant(Matrix::from_fn(2, 4, |i, j| if j == i { 50.0 } else { 0.0 }));
        let v = v_ce(&g, s, &[0, 1], 1.0).unwrap();
        assert!(g.item(v).unwrap().abs() < 1e-20);
        assert!(v_ce(&g, s, &[0, 1], 0.0).is_err());
    }

    #[test]
    fn triple_validation() {
        let x = Matrix::<f64>::zeros(3, 2);
        assert!(BatchTriple::new(x.clone(), vec![0, 1, 2], x.clone(), vec![0, 0, 0]).is_ok());
        assert!(BatchTriple::new(x.clone(), vec![0, 1], x.clone(), vec![0, 0, 0]).is_err());
        assert!(BatchTriple::new(x.clone(), vec![0, 1, 3], x, vec![0, 0, 0]).is_err());
    }
}
