//! Alternating discriminator and generator updates with best-W2
//! checkpoint selection.

use std::fmt;
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{config_hash, Checkpoint};
use crate::error::{Error, Result};
use crate::grad::{Adam, AdamConfig, Graph, GroupSet, Matrix, ParamGroup, ParamStore};
use crate::mog::{make_negatives, sample_class, sample_joint, sample_latent, MogSpec, Rng};
use crate::nets::Generator;
use crate::objectives::{BatchTriple, PdganDiscriminator, SonaDiscriminator};
use crate::ot::{w2, MetricReport};
use crate::scalar::Scalar;

/// Training recipe.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Decomposed head, slicing-adversarial plus both Bradley-Terry terms.
    Sona,
    /// As `Sona` without the mismatch term.
    SonaNoMm,
    /// Projection discriminator with the non-saturating loss.
    Pdgan,
    /// Decomposed head trained with the slicing-adversarial pair only.
    San,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sona, Method::SonaNoMm, Method::Pdgan, Method::San];

    pub fn name(self) -> &'static str {
        match self {
            Method::Sona => "sona",
            Method::SonaNoMm => "sona_no_mm",
            Method::Pdgan => "pdgan",
            Method::San => "san",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}` (expected sona, sona_no_mm, pdgan or san)")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepKind {
    Discriminator,
    Generator,
}

/// Groups each step updates. The generator step touches only the
/// generator; the discriminator step everything else that `method` has
/// and trains.
pub fn parameter_routing(method: Method, kind: StepKind) -> GroupSet {
    use ParamGroup::*;
    match (kind, method) {
        (StepKind::Generator, _) => GroupSet::of(&[Generator]),
        (StepKind::Discriminator, Method::Pdgan) => GroupSet::of(&[Features, Direction, ClassDirections]),
        (StepKind::Discriminator, Method::San) => GroupSet::of(&[Features, Direction, Weighting]),
        (StepKind::Discriminator, _) => GroupSet::of(&[Features, Direction, ClassDirections, Weighting]),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub method: Method,
    pub mog: MogSpec,
    pub batch: usize,
    pub iters: usize,
    /// Discriminator steps per generator step.
    pub update_ratio: usize,
    pub adam: AdamConfig,
    pub eval_every: usize,
    /// Samples per side for checkpoint selection.
    pub eval_samples: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Mixture-study defaults for `classes` components.
    pub fn new(method: Method, classes: usize, seed: u64) -> Self {
        Self {
            method,
            mog: MogSpec::new(classes),
            batch: 256,
            iters: 15_000,
            update_ratio: 1,
            adam: AdamConfig::default(),
            eval_every: 500,
            eval_samples: 2048,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mog.validate()?;
        self.adam.validate().map_err(|e| match e {
            Error::Config { field, message } => Error::config(format!("adam.{field}"), message),
            other => other,
        })?;
        if self.batch < 2 {
            return Err(Error::config("train.batch", "must be at least 2"));
        }
        if self.update_ratio == 0 {
            return Err(Error::config("train.update_ratio", "must be at least 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be at least 1"));
        }
        if self.eval_samples == 0 {
            return Err(Error::config("train.eval_samples", "must be at least 1"));
        }
        Ok(())
    }

    pub fn hash(&self) -> Result<String> {
        config_hash(self)
    }
}

/// Sample counts and threshold of the final report.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    pub final_w2_samples: usize,
    pub per_class_samples: usize,
    /// Defaults to the component standard deviation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            final_w2_samples: 4096,
            per_class_samples: 1024,
            epsilon: None,
        }
    }
}

impl MetricsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.final_w2_samples == 0 {
            return Err(Error::config("metrics.final_w2_samples", "must be at least 1"));
        }
        if self.per_class_samples == 0 {
            return Err(Error::config("metrics.per_class_samples", "must be at least 1"));
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                return Err(Error::config("metrics.epsilon", "must be positive"));
            }
        }
        Ok(())
    }

    pub fn epsilon_for(&self, spec: &MogSpec) -> f64 {
        self.epsilon.unwrap_or(spec.component_std)
    }
}

#[derive(Clone, Debug)]
pub enum Discriminator {
    Sona(SonaDiscriminator),
    Pdgan(PdganDiscriminator),
}

/// Generator and discriminator of one method over a shared store.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub method: Method,
    pub classes: usize,
    pub store: ParamStore<T>,
    pub generator: Generator,
    pub discriminator: Discriminator,
}

impl<T: Scalar> Model<T> {
    pub fn new(method: Method, classes: usize, rng: &mut Rng) -> Result<Self> {
        let mut store = ParamStore::new();
        let generator = Generator::new(&mut store, classes, rng)?;
        let discriminator = match method {
            Method::Pdgan => Discriminator::Pdgan(PdganDiscriminator::new(&mut store, classes, rng)?),
            Method::Sona => Discriminator::Sona(SonaDiscriminator::new(&mut store, classes, true, true, rng)?),
            Method::SonaNoMm => Discriminator::Sona(SonaDiscriminator::new(&mut store, classes, false, true, rng)?),
            Method::San => Discriminator::Sona(SonaDiscriminator::new(&mut store, classes, false, false, rng)?),
        };
        Ok(Self {
            method,
            classes,
            store,
            generator,
            discriminator,
        })
    }

    /// Generated samples for latent codes `z` and labels `y`.
    pub fn generate(&self, z: &Matrix<T>, y: &[usize]) -> Result<Matrix<T>> {
        let g = Graph::with_params(&self.store, GroupSet::NONE);
        let zv = g.constant(z.clone());
        let x = self.generator.generate(&g, zv, y)?;
        let out = g.value(x).clone();
        Ok(out)
    }

    /// Current effective loss weights; empty for the baseline.
    pub fn effective_weights(&self) -> Vec<f64> {
        match &self.discriminator {
            Discriminator::Sona(d) => d.weights.values(&self.store),
            Discriminator::Pdgan(_) => Vec::new(),
        }
    }

    pub fn snapshot(&self, iteration: usize, w2: f64, config_hash: &str) -> Checkpoint<T> {
        Checkpoint {
            iteration,
            method: self.method.name().to_string(),
            classes: self.classes,
            params: self.store.named_values(),
            weights: self.effective_weights(),
            w2,
            config_hash: config_hash.to_string(),
        }
    }

    /// Rebuilds the model of `checkpoint`.
    pub fn from_checkpoint(checkpoint: &Checkpoint<T>) -> Result<Self> {
        let method: Method = checkpoint.method.parse()?;
        let mut model = Self::new(method, checkpoint.classes, &mut Rng::new(0))?;
        model.store.load_values(&checkpoint.params)?;
        Ok(model)
    }
}

/// Loss values of one outer iteration. Unused terms are absent.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub discriminator: f64,
    pub generator: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_san: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_bt_cond: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_bt_mm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_gan: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_san: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_bt_cond: Option<f64>,
}

impl LossBreakdown {
    fn values(&self) -> impl Iterator<Item = f64> + '_ {
        [Some(self.discriminator), Some(self.generator), self.v_san, self.v_bt_cond, self.v_bt_mm, self.v_gan, self.j_san, self.j_bt_cond]
            .into_iter()
            .flatten()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(f64::is_finite)
    }
}

/// Outcome of one outer iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Completed outer iterations.
    pub iteration: usize,
    pub losses: LossBreakdown,
    /// Effective weights used by the last discriminator step.
    pub weights: Vec<f64>,
}

/// One line of the metric stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub iteration: usize,
    pub w2: f64,
    pub cw2_mean: f64,
    /// Losses of the iteration just completed; absent at iteration 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub losses: Option<LossBreakdown>,
    pub weights: Vec<f64>,
}

/// Fixed samples for checkpoint selection: a pooled data set with its
/// latent codes, and a small per-class set for monitoring.
#[derive(Clone, Debug)]
struct EvalSet<T> {
    data: Matrix<f64>,
    labels: Vec<usize>,
    z: Matrix<T>,
    per_class: Vec<(Matrix<f64>, Matrix<T>)>,
}

impl<T: Scalar> EvalSet<T> {
    fn new(spec: &MogSpec, samples: usize, rng: &mut Rng) -> Result<Self> {
        let (data, labels) = sample_joint::<f64>(spec, rng, samples);
        let z = sample_latent(rng, samples);
        let per = (samples / spec.class_count).max(32);
        let per_class = (0..spec.class_count)
            .map(|c| Ok((sample_class::<f64>(spec, rng, c, per)?, sample_latent(rng, per))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            data,
            labels,
            z,
            per_class,
        })
    }

    fn evaluate(&self, model: &Model<T>) -> Result<(f64, f64)> {
        let gen = model.generate(&self.z, &self.labels)?.cast::<f64>();
        let pooled = w2(&self.data, &gen)?;
        let mut total = 0.0;
        for (c, (data, z)) in self.per_class.iter().enumerate() {
            let gen = model.generate(z, &vec![c; z.rows()])?.cast::<f64>();
            total += w2(data, &gen)?;
        }
        Ok((pooled, total / self.per_class.len() as f64))
    }
}

/// Result of a full run.
#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub best: Checkpoint<T>,
    pub history: Vec<EvalRecord>,
}

/// Training state of one run. Initialization, training and evaluation
/// draw from independent streams of the run seed.
pub struct Trainer<T: Scalar> {
    config: TrainConfig,
    config_hash: String,
    model: Model<T>,
    adam: Adam<T>,
    rng: Rng,
    eval: EvalSet<T>,
    iteration: usize,
}

const INIT_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;
const EVAL_STREAM: u64 = 2;
/// Stream for final reports.
pub const REPORT_STREAM: u64 = 3;

impl<T: Scalar + Serialize + DeserializeOwned> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.method, config.mog.class_count, &mut Rng::stream(config.seed, INIT_STREAM))?;
        let eval = EvalSet::new(&config.mog, config.eval_samples, &mut Rng::stream(config.seed, EVAL_STREAM))?;
        Ok(Self {
            config_hash: config.hash()?,
            adam: Adam::new(config.adam),
            rng: Rng::stream(config.seed, TRAIN_STREAM),
            model,
            eval,
            iteration: 0,
            config,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    pub fn model(&self) -> &Model<T> {
        &self.model
    }

    pub fn model_mut(&mut self) -> &mut Model<T> {
        &mut self.model
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// `(w2, cw2_mean)` of the current generator on the fixed selection set.
    pub fn evaluate(&self) -> Result<(f64, f64)> {
        self.eval.evaluate(&self.model)
    }

    /// Same as [`Trainer::evaluate`] for another model, e.g. one restored
    /// from a checkpoint.
    pub fn evaluate_model(&self, model: &Model<T>) -> Result<(f64, f64)> {
        self.eval.evaluate(model)
    }

    fn generated_batch(&mut self, y: &[usize]) -> Result<Matrix<T>> {
        let z = sample_latent(&mut self.rng, y.len());
        self.model.generate(&z, y)
    }

    /// One discriminator update. Fills the discriminator fields of
    /// `losses` and returns the effective weights used.
    pub fn discriminator_step(&mut self, losses: &mut LossBreakdown) -> Result<Vec<f64>> {
        let b = self.config.batch;
        let (x_data, y) = sample_joint::<T>(&self.config.mog, &mut self.rng, b);
        let x_gen = self.generated_batch(&y)?;
        let routing = parameter_routing(self.config.method, StepKind::Discriminator);
        let model = &self.model;
        let g = Graph::with_params(&model.store, routing);
        let (loss, weights) = match &model.discriminator {
            Discriminator::Sona(d) => {
                let (_, perm) = make_negatives(&x_data, &mut self.rng)?;
                let triple = BatchTriple::new(x_data, perm, x_gen, y)?;
                let terms = d.total_discriminator_loss(&g, &triple)?;
                let item = |v: Option<crate::grad::Var>| v.map(|v| g.item(v).map(|x| x.as_f64())).transpose();
                losses.v_san = item(Some(terms.v_san))?;
                losses.v_bt_cond = item(terms.v_bt_cond)?;
                losses.v_bt_mm = item(terms.v_bt_mm)?;
                let w = g.value(terms.weights).as_slice().iter().map(|v| v.as_f64()).collect();
                (terms.total, w)
            }
            Discriminator::Pdgan(d) => {
                let loss = d.discriminator_loss(&g, &x_data, &x_gen, &y)?;
                losses.v_gan = Some(-g.item(loss)?.as_f64());
                (loss, Vec::new())
            }
        };
        losses.discriminator = g.item(loss)?.as_f64();
        self.check_finite(losses)?;
        let grads = g.backward(loss)?;
        drop(g);
        self.adam.step(&mut self.model.store, grads, routing)?;
        Ok(weights)
    }

    /// One generator update.
    pub fn generator_step(&mut self, losses: &mut LossBreakdown) -> Result<()> {
        let b = self.config.batch;
        let (x_data, y) = sample_joint::<T>(&self.config.mog, &mut self.rng, b);
        let z = sample_latent::<T>(&mut self.rng, b);
        let routing = parameter_routing(self.config.method, StepKind::Generator);
        let model = &self.model;
        let g = Graph::with_params(&model.store, routing);
        let zv = g.constant(z);
        let x_gen = model.generator.generate(&g, zv, &y)?;
        let loss = match &model.discriminator {
            Discriminator::Sona(d) => {
                let terms = d.total_generator_loss(&g, x_gen, &x_data, &y)?;
                losses.j_san = Some(g.item(terms.j_san)?.as_f64());
                losses.j_bt_cond = terms.j_bt_cond.map(|v| g.item(v).map(|x| x.as_f64())).transpose()?;
                terms.total
            }
            Discriminator::Pdgan(d) => d.generator_loss(&g, x_gen, &y)?,
        };
        losses.generator = g.item(loss)?.as_f64();
        self.check_finite(losses)?;
        let grads = g.backward(loss)?;
        drop(g);
        self.adam.step(&mut self.model.store, grads, routing)
    }

    fn check_finite(&self, losses: &LossBreakdown) -> Result<()> {
        if losses.is_finite() {
            return Ok(());
        }
        Err(Error::NonFiniteLoss {
            iteration: self.iteration + 1,
            breakdown: serde_json::to_string(losses).unwrap_or_else(|_| format!("{losses:?}")),
        })
    }

    /// One outer iteration: `update_ratio` discriminator steps, then one
    /// generator step.
    pub fn step(&mut self) -> Result<StepReport> {
        let mut losses = LossBreakdown::default();
        let mut weights = Vec::new();
        for _ in 0..self.config.update_ratio {
            weights = self.discriminator_step(&mut losses)?;
        }
        self.generator_step(&mut losses)?;
        self.iteration += 1;
        Ok(StepReport {
            iteration: self.iteration,
            losses,
            weights,
        })
    }

    fn record(&self, losses: Option<LossBreakdown>) -> Result<EvalRecord> {
        let (w2, cw2_mean) = self.evaluate()?;
        Ok(EvalRecord {
            iteration: self.iteration,
            w2,
            cw2_mean,
            losses,
            weights: self.model.effective_weights(),
        })
    }

    /// Runs the remaining iterations, evaluating at iteration 0, every
    /// `eval_every` iterations and at the end. `on_eval` sees each record
    /// as it is produced. Returns the checkpoint with the lowest W2.
    pub fn train(mut self, mut on_eval: impl FnMut(&EvalRecord) -> Result<()>) -> Result<TrainOutcome<T>> {
        let mut history = Vec::new();
        let first = self.record(None)?;
        on_eval(&first)?;
        let mut best = self.model.snapshot(self.iteration, first.w2, &self.config_hash);
        history.push(first);
        while self.iteration < self.config.iters {
            let report = self.step()?;
            if self.iteration.is_multiple_of(self.config.eval_every) || self.iteration == self.config.iters {
                let rec = self.record(Some(report.losses))?;
                on_eval(&rec)?;
                if rec.w2 < best.w2 {
                    best = self.model.snapshot(self.iteration, rec.w2, &self.config_hash);
                }
                history.push(rec);
            }
        }
        Ok(TrainOutcome { best, history })
    }
}

/// Pooled and per-class metrics of `model` on fresh samples from `rng`.
pub fn final_report<T: Scalar>(model: &Model<T>, spec: &MogSpec, metrics: &MetricsConfig, rng: &mut Rng) -> Result<MetricReport> {
    metrics.validate()?;
    let n = metrics.final_w2_samples;
    let (data, labels) = sample_joint::<f64>(spec, rng, n);
    let z = sample_latent::<T>(rng, n);
    let gen = model.generate(&z, &labels)?.cast::<f64>();
    let per = metrics.per_class_samples;
    let mut per_class = Vec::with_capacity(spec.class_count);
    for c in 0..spec.class_count {
        let d = sample_class::<f64>(spec, rng, c, per)?;
        let z = sample_latent::<T>(rng, per);
        let g = model.generate(&z, &vec![c; per])?.cast::<f64>();
        per_class.push((d, g));
    }
    MetricReport::from_samples(&data, &gen, &per_class, metrics.epsilon_for(spec))
}
