//! The property suite behind `sona verify`: every check reports a measured
//! error next to its tolerance.

use std::fmt;

use crate::grad::{Graph, GroupSet, Matrix, ParamGrads, ParamGroup, ParamStore, Var};
use crate::mog::{make_negatives, sample_latent, Rng};
use crate::nets::SonaVars;
use crate::objectives::{
    effective_weights, gan_nonsaturating, j_bt_cond, j_san, scaled_log_sigmoid, scaled_log_sigmoid_ds, v_bt_cond, v_bt_mm,
    v_ce, v_san, v_san_parts, BatchTriple, PdganDiscriminator, Scores, SonaDiscriminator, WeightTriplet,
};
use crate::ot::{solve_assignment, w2};
use crate::trainer::{parameter_routing, Discriminator, Method, Model, StepKind, TrainConfig, Trainer};
use crate::Result;

use super::{brute_force_assignment, log_gap_maximizer_error, log_posterior_maximizer_error, param_gradient_error, AscentConfig, DiscreteJoint};

/// Outcome of one property.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub property: String,
    pub measured: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured <= tolerance`.
    pub fn at_most(property: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            measured,
            tolerance,
            passed: measured <= tolerance,
        }
    }

    /// Passes when `measured < tolerance`.
    pub fn below(property: impl Into<String>, measured: f64, tolerance: f64) -> Self {
        Self {
            property: property.into(),
            measured,
            tolerance,
            passed: measured < tolerance,
        }
    }

    fn from_result(property: impl Into<String>, measured: Result<f64>, tolerance: f64) -> Self {
        Self::below(property, measured.unwrap_or(f64::INFINITY), tolerance)
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<48} measured {:.3e}  tolerance {:.1e}", self.property, self.measured, self.tolerance)
    }
}

/// Small random instance of every model, with one batch of inputs.
/// Parameters are jittered away from their initial values so that
/// directions, weights and readouts are all generic.
pub struct Fixture {
    pub sona: Model<f64>,
    pub pdgan: Model<f64>,
    pub x_data: Matrix<f64>,
    pub z: Matrix<f64>,
    pub y: Vec<usize>,
    pub neg_perm: Vec<usize>,
}

pub const FIXTURE_CLASSES: usize = 3;
pub const FIXTURE_BATCH: usize = 4;

fn jitter(store: &mut ParamStore<f64>, rng: &mut Rng, std: f64) {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id).as_mut_slice() {
            *v += std * rng.normal();
        }
    }
}

impl Fixture {
    pub fn new(seed: u64) -> Result<Self> {
        let mut rng = Rng::new(seed);
        let mut sona = Model::new(Method::Sona, FIXTURE_CLASSES, &mut rng)?;
        let mut pdgan = Model::new(Method::Pdgan, FIXTURE_CLASSES, &mut rng)?;
        jitter(&mut sona.store, &mut rng, 0.1);
        jitter(&mut pdgan.store, &mut rng, 0.1);
        let x_data = rng.normal_matrix(FIXTURE_BATCH, 2, 0.5);
        let z = sample_latent(&mut rng, FIXTURE_BATCH);
        let y = (0..FIXTURE_BATCH).map(|_| rng.below(FIXTURE_CLASSES)).collect();
        let (_, neg_perm) = make_negatives(&x_data, &mut rng)?;
        Ok(Self {
            sona,
            pdgan,
            x_data,
            z,
            y,
            neg_perm,
        })
    }

    pub fn sona_disc(&self) -> &SonaDiscriminator {
        match &self.sona.discriminator {
            Discriminator::Sona(d) => d,
            Discriminator::Pdgan(_) => unreachable!("sona model has a decomposed head"),
        }
    }

    pub fn pdgan_disc(&self) -> &PdganDiscriminator {
        match &self.pdgan.discriminator {
            Discriminator::Pdgan(d) => d,
            Discriminator::Sona(_) => unreachable!("pdgan model has a projection head"),
        }
    }

    pub fn x_gen(&self, model: &Model<f64>) -> Result<Matrix<f64>> {
        model.generate(&self.z, &self.y)
    }

    /// Generated samples as a node carrying generator gradients.
    pub fn gen_node(&self, g: &Graph<'_, f64>, model: &Model<f64>) -> Result<Var> {
        model.generator.generate(g, g.constant(self.z.clone()), &self.y)
    }

    pub fn triple(&self) -> Result<BatchTriple<f64>> {
        BatchTriple::new(self.x_data.clone(), self.neg_perm.clone(), self.x_gen(&self.sona)?, self.y.clone())
    }
}

/// Features of data and generated samples, the bound head and weights.
pub struct Bound {
    pub h_data: Var,
    pub h_gen: Var,
    pub vars: SonaVars,
    pub weights: Var,
}

/// Binds the decomposed head on data and on `x_gen`.
pub fn bind_sona(g: &Graph<'_, f64>, fx: &Fixture, x_gen: Var) -> Result<Bound> {
    let d = fx.sona_disc();
    let h_data = d.features.forward(g, g.constant(fx.x_data.clone()))?;
    let h_gen = d.features.forward(g, x_gen)?;
    Ok(Bound {
        h_data,
        h_gen,
        vars: d.head.bind(g)?,
        weights: d.weights.bind(g)?,
    })
}

/// A loss under test: which model it reads, which groups it differentiates
/// and how to build it.
pub struct LossCase {
    pub name: &'static str,
    pub pdgan: bool,
    pub groups: GroupSet,
    pub build: fn(&Graph<'_, f64>, &Fixture) -> Result<Var>,
}

fn d_groups() -> GroupSet {
    parameter_routing(Method::Sona, StepKind::Discriminator)
}

fn g_groups() -> GroupSet {
    parameter_routing(Method::Sona, StepKind::Generator)
}

fn const_gen(g: &Graph<'_, f64>, fx: &Fixture) -> Result<Var> {
    Ok(g.constant(fx.x_gen(&fx.sona)?))
}

/// Every public loss, each differentiated with respect to the groups its
/// training step updates.
pub fn loss_cases() -> Vec<LossCase> {
    vec![
        LossCase {
            name: "V_SAN",
            pdgan: false,
            groups: d_groups(),
            build: |g, fx| {
                let b = bind_sona(g, fx, const_gen(g, fx)?)?;
                v_san(g, &b.vars, b.h_data, b.h_gen, WeightTriplet::term(g, b.weights, 0)?)
            },
        },
        LossCase {
            name: "J_SAN",
            pdgan: false,
            groups: g_groups(),
            build: |g, fx| {
                let b = bind_sona(g, fx, fx.gen_node(g, &fx.sona)?)?;
                j_san(g, &b.vars, b.h_gen)
            },
        },
        LossCase {
            name: "V_BT-c",
            pdgan: false,
            groups: d_groups(),
            build: |g, fx| {
                let b = bind_sona(g, fx, const_gen(g, fx)?)?;
                let data = Scores::of(g, &b.vars, b.h_data, &fx.y)?;
                let gen = Scores::of(g, &b.vars, b.h_gen, &fx.y)?;
                v_bt_cond(g, data, gen, WeightTriplet::term(g, b.weights, 1)?)
            },
        },
        LossCase {
            name: "V_BT-m",
            pdgan: false,
            groups: d_groups(),
            build: |g, fx| {
                let b = bind_sona(g, fx, const_gen(g, fx)?)?;
                let data = Scores::of(g, &b.vars, b.h_data, &fx.y)?;
                let neg = Scores::of(g, &b.vars, g.gather_rows(b.h_data, &fx.neg_perm)?, &fx.y)?;
                v_bt_mm(g, data, neg, WeightTriplet::term(g, b.weights, 2)?)
            },
        },
        LossCase {
            name: "J_BT-c",
            pdgan: false,
            groups: g_groups(),
            build: |g, fx| {
                let b = bind_sona(g, fx, fx.gen_node(g, &fx.sona)?)?;
                let gen = Scores::of(g, &b.vars, b.h_gen, &fx.y)?;
                let data = Scores::of(g, &b.vars, b.h_data, &fx.y)?;
                j_bt_cond(g, gen, data)
            },
        },
        LossCase {
            name: "V_CE",
            pdgan: false,
            groups: GroupSet::of(&[ParamGroup::Features, ParamGroup::ClassDirections]),
            build: |g, fx| {
                let b = bind_sona(g, fx, const_gen(g, fx)?)?;
                let r = b.vars.residual(g, b.h_data)?;
                let scores = g.matmul(r, g.transpose(b.vars.omega_y))?;
                v_ce(g, scores, &fx.y, 1.0)
            },
        },
        LossCase {
            name: "non-saturating GAN (discriminator)",
            pdgan: true,
            groups: parameter_routing(Method::Pdgan, StepKind::Discriminator),
            build: |g, fx| {
                let d = fx.pdgan_disc();
                let yy: Vec<usize> = fx.y.iter().chain(&fx.y).copied().collect();
                let x = g.concat_rows(&[g.constant(fx.x_data.clone()), g.constant(fx.x_gen(&fx.pdgan)?)])?;
                let f = d.head.score(g, d.features.forward(g, x)?, &yy)?;
                let b = fx.y.len();
                let (max, _) = gan_nonsaturating(g, g.slice_rows(f, 0, b)?, g.slice_rows(f, b, 2 * b)?)?;
                Ok(max)
            },
        },
        LossCase {
            name: "non-saturating GAN (generator)",
            pdgan: true,
            groups: parameter_routing(Method::Pdgan, StepKind::Generator),
            build: |g, fx| {
                let d = fx.pdgan_disc();
                let x_data = g.constant(fx.x_data.clone());
                let x_gen = fx.gen_node(g, &fx.pdgan)?;
                let f_data = d.head.score(g, d.features.forward(g, x_data)?, &fx.y)?;
                let f_gen = d.head.score(g, d.features.forward(g, x_gen)?, &fx.y)?;
                let (_, min) = gan_nonsaturating(g, f_data, f_gen)?;
                Ok(min)
            },
        },
        LossCase {
            name: "total discriminator loss",
            pdgan: false,
            groups: d_groups(),
            build: |g, fx| Ok(fx.sona_disc().total_discriminator_loss(g, &fx.triple()?)?.total),
        },
        LossCase {
            name: "total generator loss",
            pdgan: false,
            groups: g_groups(),
            build: |g, fx| {
                let x_gen = fx.gen_node(g, &fx.sona)?;
                Ok(fx.sona_disc().total_generator_loss(g, x_gen, &fx.x_data, &fx.y)?.total)
            },
        },
        LossCase {
            name: "baseline discriminator loss",
            pdgan: true,
            groups: parameter_routing(Method::Pdgan, StepKind::Discriminator),
            build: |g, fx| fx.pdgan_disc().discriminator_loss(g, &fx.x_data, &fx.x_gen(&fx.pdgan)?, &fx.y),
        },
        LossCase {
            name: "baseline generator loss",
            pdgan: true,
            groups: parameter_routing(Method::Pdgan, StepKind::Generator),
            build: |g, fx| {
                let x_gen = fx.gen_node(g, &fx.pdgan)?;
                fx.pdgan_disc().generator_loss(g, x_gen, &fx.y)
            },
        },
    ]
}

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

/// Worst relative error of autodiff against central differences for each
/// loss over `points` random fixtures.
pub fn gradient_checks(points: u64) -> Vec<Check> {
    let fixtures: Vec<Result<Fixture>> = (0..points).map(|k| Fixture::new(1000 + k)).collect();
    loss_cases()
        .into_iter()
        .map(|case| {
            let worst = fixtures.iter().try_fold(0.0f64, |acc, fx| {
                let fx = fx.as_ref().map_err(|e| crate::Error::Contract(e.to_string()))?;
                let model = if case.pdgan { &fx.pdgan } else { &fx.sona };
                let err = param_gradient_error(&model.store, case.groups, GRAD_STEP, |g| (case.build)(g, fx))?;
                Ok(acc.max(err))
            });
            Check::from_result(format!("gradient of {}", case.name), worst, GRAD_TOLERANCE)
        })
        .collect()
}

/// Backward pass of `build` with every group trainable.
fn all_grads(store: &ParamStore<f64>, build: impl Fn(&Graph<'_, f64>) -> Result<Var>) -> Result<ParamGrads<f64>> {
    let g = Graph::with_params(store, GroupSet::ALL);
    let loss = build(&g)?;
    g.backward(loss)
}

/// Largest absolute gradient entry on `ids`; a missing gradient is zero.
fn leaked(grads: &ParamGrads<f64>, ids: impl Iterator<Item = crate::grad::ParamId>) -> f64 {
    ids.filter_map(|id| grads.get(id))
        .flat_map(|m| m.as_slice().iter().map(|v| v.abs()))
        .fold(0.0, f64::max)
}

/// Number of gradient entries whose bits differ between two passes.
fn differing_bits(store: &ParamStore<f64>, a: &ParamGrads<f64>, b: &ParamGrads<f64>) -> f64 {
    let zeros = |id| Matrix::zeros(store.value(id).rows(), store.value(id).cols());
    store
        .ids()
        .map(|id| {
            let ga = a.get(id).cloned().unwrap_or_else(|| zeros(id));
            let gb = b.get(id).cloned().unwrap_or_else(|| zeros(id));
            ga.as_slice().iter().zip(gb.as_slice()).filter(|(x, y)| x.to_bits() != y.to_bits()).count()
        })
        .sum::<usize>() as f64
}

fn frozen(g: &Graph<'_, f64>, s: Scores) -> Scores {
    let value = g.value(s.naturalness).clone();
    Scores {
        naturalness: g.constant(value),
        alignment: s.alignment,
    }
}

/// The four stop-gradient contracts, each asserted bitwise.
pub fn stop_gradient_checks(seed: u64) -> Vec<Check> {
    let run = || -> Result<Vec<Check>> {
        let fx = Fixture::new(seed)?;
        let store = &fx.sona.store;
        let d = fx.sona_disc();
        let features: Vec<_> = store.ids_in(GroupSet::of(&[ParamGroup::Features])).collect();
        let mut out = Vec::new();

        let direction = all_grads(store, |g| {
            let b = bind_sona(g, &fx, const_gen(g, &fx)?)?;
            Ok(v_san_parts(g, &b.vars, b.h_data, b.h_gen, WeightTriplet::term(g, b.weights, 0)?)?.0)
        })?;
        let gan = all_grads(store, |g| {
            let b = bind_sona(g, &fx, const_gen(g, &fx)?)?;
            Ok(v_san_parts(g, &b.vars, b.h_data, b.h_gen, WeightTriplet::term(g, b.weights, 0)?)?.1)
        })?;
        let whole = all_grads(store, |g| {
            let b = bind_sona(g, &fx, const_gen(g, &fx)?)?;
            v_san(g, &b.vars, b.h_data, b.h_gen, WeightTriplet::term(g, b.weights, 0)?)
        })?;
        out.push(Check::at_most(
            "sg: V_SAN direction terms leave features and b",
            leaked(&direction, features.iter().copied().chain([d.head.bias_id()])),
            0.0,
        ));
        out.push(Check::at_most("sg: V_SAN GAN term leaves omega", leaked(&gan, [d.head.omega_id()].into_iter()), 0.0));
        out.push(Check::at_most("sg: V_SAN leaves omega_y", leaked(&whole, [d.head.omega_y_id()].into_iter()), 0.0));

        let mut bt_diff = 0.0;
        let mut bt_bias = 0.0f64;
        for mismatch in [false, true] {
            let build = |g: &Graph<'_, f64>, freeze: bool| -> Result<Var> {
                let b = bind_sona(g, &fx, const_gen(g, &fx)?)?;
                let mut data = Scores::of(g, &b.vars, b.h_data, &fx.y)?;
                let h_loser = if mismatch { g.gather_rows(b.h_data, &fx.neg_perm)? } else { b.h_gen };
                let mut loser = Scores::of(g, &b.vars, h_loser, &fx.y)?;
                if freeze {
                    data = frozen(g, data);
                    loser = frozen(g, loser);
                }
                let s = WeightTriplet::term(g, b.weights, if mismatch { 2 } else { 1 })?;
                if mismatch {
                    v_bt_mm(g, data, loser, s)
                } else {
                    v_bt_cond(g, data, loser, s)
                }
            };
            let live = all_grads(store, |g| build(g, false))?;
            let fixed = all_grads(store, |g| build(g, true))?;
            bt_diff += differing_bits(store, &live, &fixed);
            bt_bias = bt_bias.max(leaked(&live, [d.head.bias_id()].into_iter()));
        }
        out.push(Check::at_most("sg: V_BT grads equal frozen-naturalness grads", bt_diff, 0.0));
        out.push(Check::at_most("sg: V_BT leaves b", bt_bias, 0.0));

        let jbt = |freeze: bool| {
            all_grads(store, |g| {
                let b = bind_sona(g, &fx, fx.gen_node(g, &fx.sona)?)?;
                let mut gen = Scores::of(g, &b.vars, b.h_gen, &fx.y)?;
                if freeze {
                    gen = frozen(g, gen);
                }
                let data = Scores::of(g, &b.vars, b.h_data, &fx.y)?;
                j_bt_cond(g, gen, data)
            })
        };
        out.push(Check::at_most(
            "sg: J_BT-c grads equal frozen f_N(x_gen) grads",
            differing_bits(store, &jbt(false)?, &jbt(true)?),
            0.0,
        ));
        Ok(out)
    };
    run().unwrap_or_else(|e| vec![Check::at_most(format!("sg: contracts ({e})"), f64::INFINITY, 0.0)])
}

pub const UNIT_TOLERANCE: f64 = 1e-12;
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-10;

/// Worst `| ||row|| - 1 |` of `m`.
fn unit_error(m: &Matrix<f64>) -> f64 {
    (0..m.rows())
        .map(|i| (m.row(i).iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Unit directions, residual orthogonality and unit-sphere weights, the
/// last at every iteration of a short training run.
pub fn structural_checks(iters: usize) -> Vec<Check> {
    let run = || -> Result<Vec<Check>> {
        let mut out = Vec::new();
        let fx = Fixture::new(7)?;
        let d = fx.sona_disc();
        let g = Graph::with_params(&fx.sona.store, GroupSet::NONE);
        let vars = d.head.bind(&g)?;
        let mut rng = Rng::new(8);
        let h = g.constant(rng.normal_matrix(200, d.features.dim(), 3.0));
        let p = vars.project(&g, vars.residual(&g, h)?)?;
        let ortho = g.value(p).as_slice().iter().map(|v| v.abs()).fold(0.0, f64::max);
        out.push(Check::at_most("<omega, residual> = 0", ortho, ORTHOGONALITY_TOLERANCE));
        let norms = unit_error(&g.value(vars.omega)).max(unit_error(&g.value(vars.omega_y)));
        out.push(Check::at_most("||omega|| = ||omega_y|| = 1", norms, UNIT_TOLERANCE));

        let mut trainer = Trainer::<f64>::new(TrainConfig {
            iters,
            batch: 64,
            ..TrainConfig::new(Method::Sona, 6, 0)
        })?;
        let mut worst = 0.0f64;
        for _ in 0..iters {
            let r = trainer.step()?;
            worst = worst.max((r.weights.iter().map(|w| w * w).sum::<f64>() - 1.0).abs());
        }
        out.push(Check::at_most(format!("weights on the unit sphere ({iters} iterations)"), worst, UNIT_TOLERANCE));
        Ok(out)
    };
    run().unwrap_or_else(|e| vec![Check::at_most(format!("structure ({e})"), f64::INFINITY, 0.0)])
}

pub const WEIGHT_SCALES: [f64; 4] = [0.1, 0.3, 0.5, 0.9];

/// `(lo..=hi)` in `n` even steps.
pub fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| lo + (hi - lo) * k as f64 / n as f64).collect()
}

/// Largest `next - previous` along `values`; negative means strictly
/// decreasing.
pub fn worst_rise(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// Largest `previous - next` along `values`; negative means strictly
/// increasing.
pub fn worst_fall(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max)
}

/// Properties of `d/ds [log sigmoid(s d) / s]`: the closed form matches
/// differences of the scaled log-sigmoid, it rises in `d` up to zero and
/// falls after, it falls in `s` for `d >= 0`, and equals `4 ln 2` at
/// `s = 0.5, d = 0`.
pub fn weighting_checks() -> Vec<Check> {
    let mut out = Vec::new();
    let mut fd = 0.0f64;
    for &s in &WEIGHT_SCALES {
        for d in grid(-5.0, 5.0, 40) {
            let h = 1e-6;
            let num = (scaled_log_sigmoid(s + h, d).unwrap_or(f64::NAN) - scaled_log_sigmoid(s - h, d).unwrap_or(f64::NAN)) / (2.0 * h);
            let exact = scaled_log_sigmoid_ds(s, d);
            fd = fd.max((num - exact).abs() / exact.abs().max(1.0));
        }
    }
    out.push(Check::below("weight derivative matches differences", fd, 1e-6));

    let rise = |s: f64, lo: f64, hi: f64| grid(lo, hi, 1000).into_iter().map(|d| scaled_log_sigmoid_ds(s, d)).collect::<Vec<_>>();
    let up = WEIGHT_SCALES.iter().map(|&s| worst_fall(&rise(s, -5.0, 0.0))).fold(f64::NEG_INFINITY, f64::max);
    let down = WEIGHT_SCALES.iter().map(|&s| worst_rise(&rise(s, 0.0, 5.0))).fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::below("weight derivative rises in d on [-5, 0]", up, 0.0));
    out.push(Check::below("weight derivative falls in d on [0, 5]", down, 0.0));

    let scales = grid(0.01, 0.99, 98);
    let in_s = [0.0, 1.0, 3.0]
        .iter()
        .map(|&d| worst_rise(&scales.iter().map(|&s| scaled_log_sigmoid_ds(s, d)).collect::<Vec<_>>()))
        .fold(f64::NEG_INFINITY, f64::max);
    out.push(Check::below("weight derivative falls in s for d in {0, 1, 3}", in_s, 0.0));
    let spot = (scaled_log_sigmoid_ds(0.5, 0.0) - 4.0 * std::f64::consts::LN_2).abs();
    out.push(Check::at_most("weight derivative at s=0.5, d=0 is 4 ln 2", spot, 1e-9));

    let w = effective_weights(&[0.0, 0.0, 0.0]);
    let eq = w.iter().map(|v| (v - 1.0 / 3f64.sqrt()).abs()).fold(0.0, f64::max);
    out.push(Check::at_most("equal raws give weights 1/sqrt(3)", eq, 1e-15));
    out
}

/// Solver against brute force on 50 random instances, and the metric
/// axioms of `w2`.
pub fn ot_checks(seed: u64) -> Vec<Check> {
    let run = || -> Result<Vec<Check>> {
        let mut rng = Rng::new(seed);
        let mut worst = 0.0f64;
        for case in 0..50 {
            let n = 1 + case % 6;
            let cost = Matrix::from_fn(n, n, |_, _| rng.uniform(0.0, 10.0));
            let (_, best) = brute_force_assignment(&cost);
            let got = solve_assignment(&cost)?.total_cost;
            worst = worst.max((got - best).abs());
        }
        let mut out = vec![Check::at_most("assignment equals brute force (50 cases, n <= 6)", worst, 0.0)];

        let (mut ident, mut sym, mut tri, mut shift) = (0.0f64, 0.0f64, f64::NEG_INFINITY, 0.0f64);
        for _ in 0..20 {
            let n = 12;
            let a: Matrix<f64> = rng.normal_matrix(n, 2, 1.0);
            let b: Matrix<f64> = rng.normal_matrix(n, 2, 1.0);
            let c: Matrix<f64> = rng.normal_matrix(n, 2, 1.0);
            ident = ident.max(w2(&a, &a)?);
            sym = sym.max((w2(&a, &b)? - w2(&b, &a)?).abs());
            tri = tri.max(w2(&a, &c)? - w2(&a, &b)? - w2(&b, &c)?);
            let (dx, dy) = (rng.normal() * 3.0, rng.normal() * 3.0);
            let move_by = |m: &Matrix<f64>| Matrix::from_fn(n, 2, |i, j| m.get(i, j) + if j == 0 { dx } else { dy });
            shift = shift.max((w2(&move_by(&a), &move_by(&b))? - w2(&a, &b)?).abs());
        }
        out.push(Check::at_most("w2(a, a) = 0", ident, 0.0));
        out.push(Check::at_most("w2 symmetric", sym, 1e-9));
        out.push(Check::at_most("w2 triangle inequality", tri.max(0.0), 1e-9));
        out.push(Check::at_most("w2 translation invariant", shift, 1e-9));
        Ok(out)
    };
    run().unwrap_or_else(|e| vec![Check::at_most(format!("optimal transport ({e})"), f64::INFINITY, 0.0)])
}

pub const ORACLE_TOLERANCE: f64 = 1e-3;

/// The 2x2 diagonal table.
pub fn diagonal_joint() -> DiscreteJoint {
    DiscreteJoint::new(vec![vec![0.4, 0.1], vec![0.1, 0.4]]).expect("diagonal table is valid")
}

/// Discrete maximizer oracles on the diagonal table and `random` random
/// tables of sizes 2 to 4.
pub fn discrete_checks(random: usize, seed: u64) -> Vec<Check> {
    let cfg = AscentConfig::default();
    let mut rng = Rng::new(seed);
    let mut gap = vec![log_gap_maximizer_error(&diagonal_joint(), &cfg)];
    let mut post = vec![log_posterior_maximizer_error(&diagonal_joint(), &cfg)];
    for k in 0..random {
        let (xs, ys) = (2 + k % 3, 2 + (k / 3) % 3);
        gap.push(DiscreteJoint::random(xs, ys, false, &mut rng).and_then(|j| log_gap_maximizer_error(&j, &cfg)));
        post.push(DiscreteJoint::random(xs, ys, true, &mut rng).and_then(|j| log_posterior_maximizer_error(&j, &cfg)));
    }
    let worst = |rs: Vec<Result<f64>>| rs.into_iter().try_fold(0.0f64, |acc, r| r.map(|v| acc.max(v)));
    vec![
        Check::from_result(format!("BT mismatch maximizer is the log gap ({} tables)", random + 1), worst(gap), ORACLE_TOLERANCE),
        Check::from_result(format!("cross-entropy maximizer is log p(y|x) ({} tables)", random + 1), worst(post), ORACLE_TOLERANCE),
    ]
}

/// Every property, in report order.
pub fn run_all() -> Vec<Check> {
    let mut out = gradient_checks(5);
    out.extend(stop_gradient_checks(21));
    out.extend(structural_checks(500));
    out.extend(weighting_checks());
    out.extend(ot_checks(31));
    out.extend(discrete_checks(10, 41));
    out
}
