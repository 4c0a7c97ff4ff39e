//! Run configs, run directories and resumable seed sweeps.
//!
//! A run directory holds `config.json` (the resolved config),
//! `metrics.jsonl` (one [`EvalRecord`] per evaluation), `timing.jsonl`
//! (wall-clock milliseconds per evaluation), `best_checkpoint.json` and
//! `final_report.json`. Wall-clock time lives in its own file so that the
//! metric stream of a seed is reproducible byte for byte.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{write_atomic, Checkpoint};
use crate::error::{Error, Result};
use crate::grad::AdamConfig;
use crate::mog::{MogSpec, Rng};
use crate::ot::MetricReport;
use crate::trainer::{final_report, EvalRecord, MetricsConfig, Method, Model, TrainConfig, Trainer, REPORT_STREAM};
use crate::Real;

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TIMING_FILE: &str = "timing.jsonl";
pub const CHECKPOINT_FILE: &str = "best_checkpoint.json";
pub const REPORT_FILE: &str = "final_report.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const FAILURES_FILE: &str = "failures.json";

/// The `train` section of a run config.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch: usize,
    pub iters: usize,
    pub update_ratio: usize,
    /// Shared Adam learning rate of every parameter group.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eval_every: usize,
    pub eval_samples: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::new(Method::Sona, 1, 0);
        Self {
            batch: t.batch,
            iters: t.iters,
            update_ratio: t.update_ratio,
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eval_every: t.eval_every,
            eval_samples: t.eval_samples,
        }
    }
}

/// On-disk experiment config. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub method: Method,
    pub mog: MogSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

impl RunConfig {
    pub fn new(method: Method, classes: usize, output_dir: impl Into<PathBuf>) -> Self {
        Self {
            method,
            mog: MogSpec::new(classes),
            train: TrainSection::default(),
            metrics: MetricsConfig::default(),
            seeds: default_seeds(),
            output_dir: output_dir.into(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config { field, message } => Error::config(field, format!("{message} (in {})", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "must list at least one seed"));
        }
        if self.output_dir.as_os_str().is_empty() {
            return Err(Error::config("output_dir", "must not be empty"));
        }
        self.metrics.validate()?;
        self.train_config(self.seeds[0]).validate()
    }

    /// Trainer settings of one seed.
    pub fn train_config(&self, seed: u64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            method: self.method,
            mog: self.mog,
            batch: t.batch,
            iters: t.iters,
            update_ratio: t.update_ratio,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                ..AdamConfig::default()
            },
            eval_every: t.eval_every,
            eval_samples: t.eval_samples,
            seed,
        }
    }
}

/// Resolved settings of a single run, as written to `config.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResolvedRun {
    pub train: TrainConfig,
    pub metrics: MetricsConfig,
    pub config_hash: String,
    #[serde(default)]
    pub metadata: RunMetadata,
}

/// Choices that affect results but are not settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub rng_algorithm: String,
    pub direction_normalization: String,
    pub checkpoint_selection: String,
    pub final_metrics: String,
}

impl RunMetadata {
    pub fn of(train: &TrainConfig, metrics: &MetricsConfig) -> Self {
        Self {
            rng_algorithm: Rng::ALGORITHM.to_string(),
            direction_normalization: "unit-normalized in every forward pass; raw parameters unconstrained".to_string(),
            checkpoint_selection: format!(
                "lowest pooled W2 on {} samples per side, evaluated every {} iterations",
                train.eval_samples, train.eval_every
            ),
            final_metrics: format!(
                "exact assignment on {} pooled samples per side for W2 and {} per class per side for cW2",
                metrics.final_w2_samples, metrics.per_class_samples
            ),
        }
    }
}

/// Wall-clock time of one evaluation.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimingRecord {
    pub iteration: usize,
    pub wall_ms: u64,
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    #[serde(rename = "N")]
    pub classes: usize,
    pub seed: u64,
    pub w2: f64,
    pub cw2_mean: f64,
    pub is_failure: bool,
}

/// `<root>/<method>/n<N>/seed<S>`.
pub fn run_dir(root: &Path, method: Method, classes: usize, seed: u64) -> PathBuf {
    root.join(method.name()).join(format!("n{classes}")).join(format!("seed{seed}"))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<S: Serialize>(value: &S) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::contract(format!("serialization: {e}")))
}

fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn jsonl<S: Serialize>(items: &[S]) -> Result<String> {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).map_err(|e| Error::contract(format!("serialization: {e}")))?);
        out.push('\n');
    }
    Ok(out)
}

/// Trains one seed into `dir` and writes every run file. The metric and
/// timing streams are rewritten atomically after each evaluation, so an
/// interrupted run leaves complete lines only.
pub fn run_one(train: &TrainConfig, metrics: &MetricsConfig, dir: &Path) -> Result<MetricReport> {
    metrics.validate()?;
    let trainer = Trainer::<Real>::new(train.clone())?;
    create_dir(dir)?;
    let resolved = ResolvedRun {
        train: train.clone(),
        metrics: *metrics,
        config_hash: trainer.config_hash().to_string(),
        metadata: RunMetadata::of(train, metrics),
    };
    write_atomic(&dir.join(CONFIG_FILE), to_json(&resolved)?.as_bytes())?;
    let _ = std::fs::remove_file(dir.join(REPORT_FILE));

    let start = Instant::now();
    let mut records: Vec<EvalRecord> = Vec::new();
    let mut timing: Vec<TimingRecord> = Vec::new();
    let outcome = trainer.train(|rec| {
        records.push(rec.clone());
        timing.push(TimingRecord {
            iteration: rec.iteration,
            wall_ms: start.elapsed().as_millis() as u64,
        });
        write_atomic(&dir.join(METRICS_FILE), jsonl(&records)?.as_bytes())?;
        write_atomic(&dir.join(TIMING_FILE), jsonl(&timing)?.as_bytes())
    })?;
    outcome.best.save(&dir.join(CHECKPOINT_FILE))?;

    let model = Model::from_checkpoint(&outcome.best)?;
    let mut rng = Rng::stream(train.seed, REPORT_STREAM);
    let report = final_report(&model, &train.mog, metrics, &mut rng)?;
    write_atomic(&dir.join(REPORT_FILE), to_json(&report)?.as_bytes())?;
    Ok(report)
}

/// Reads back a finished run, or `None` if it is missing, incomplete or
/// was produced by different settings.
pub fn finished_run(train: &TrainConfig, metrics: &MetricsConfig, dir: &Path) -> Option<MetricReport> {
    let report_path = dir.join(REPORT_FILE);
    if !report_path.exists() {
        return None;
    }
    let resolved: ResolvedRun = read_json(&dir.join(CONFIG_FILE)).ok()?;
    if resolved.train != *train || resolved.metrics != *metrics {
        return None;
    }
    read_json(&report_path).ok()
}

/// Loads the best checkpoint of a run directory.
pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint<Real>> {
    Checkpoint::load(&dir.join(CHECKPOINT_FILE))
}

/// Per (method, N) statistics over seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    #[serde(rename = "N")]
    pub classes: usize,
    pub runs: usize,
    pub w2_mean: f64,
    pub w2_std: f64,
    pub cw2_mean: f64,
    pub cw2_std: f64,
    /// Number of failing seeds.
    pub nf: usize,
}

/// Mean and sample standard deviation (zero for a single value).
fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn aggregate(rows: &[SummaryRow]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<(Method, usize), Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.method, r.classes)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((method, classes), rs)| {
            let (w2_mean, w2_std) = mean_std(&rs.iter().map(|r| r.w2).collect::<Vec<_>>());
            let (cw2_mean, cw2_std) = mean_std(&rs.iter().map(|r| r.cw2_mean).collect::<Vec<_>>());
            AggregateRow {
                method,
                classes,
                runs: rs.len(),
                w2_mean,
                w2_std,
                cw2_mean,
                cw2_std,
                nf: rs.iter().filter(|r| r.is_failure).count(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("method,N,seed,w2,cw2_mean,is_failure\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", r.method, r.classes, r.seed, r.w2, r.cw2_mean, r.is_failure);
    }
    out
}

pub fn aggregate_csv(rows: &[AggregateRow]) -> String {
    let mut out = String::from("method,N,runs,w2_mean,w2_std,cw2_mean,cw2_std,nf\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.method, r.classes, r.runs, r.w2_mean, r.w2_std, r.cw2_mean, r.cw2_std, r.nf
        );
    }
    out
}

/// Parses `summary.csv` as written by [`summary_csv`].
pub fn parse_summary_csv(text: &str) -> Result<Vec<SummaryRow>> {
    let bad = |line: usize, what: &str| Error::contract(format!("summary.csv line {}: {what}", line + 1));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "method,N,seed,w2,cw2_mean,is_failure")) => {}
        _ => return Err(bad(0, "unexpected header")),
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 6 {
                return Err(bad(i, "expected 6 fields"));
            }
            Ok(SummaryRow {
                method: f[0].parse()?,
                classes: f[1].parse().map_err(|_| bad(i, "N"))?,
                seed: f[2].parse().map_err(|_| bad(i, "seed"))?,
                w2: f[3].parse().map_err(|_| bad(i, "w2"))?,
                cw2_mean: f[4].parse().map_err(|_| bad(i, "cw2_mean"))?,
                is_failure: f[5].parse().map_err(|_| bad(i, "is_failure"))?,
            })
        })
        .collect()
}

/// One sweep cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub method: Method,
    #[serde(rename = "N")]
    pub classes: usize,
    pub seed: u64,
}

/// A cell that did not finish, with its error message.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CellFailure {
    #[serde(flatten)]
    pub cell: Cell,
    pub error: String,
}

/// What happened to a cell, reported as each one completes.
#[derive(Clone, Debug)]
pub enum CellEvent<'a> {
    Reused(Cell),
    Trained(Cell, &'a MetricReport),
    Failed(Cell, &'a str),
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub rows: Vec<SummaryRow>,
    pub aggregate: Vec<AggregateRow>,
    pub failures: Vec<CellFailure>,
    /// Cells trained in this call (not reused).
    pub trained: usize,
}

/// A finished cell, its report or error, and whether it was trained now.
type CellResult = (Cell, std::result::Result<MetricReport, String>, bool);

/// Sweep grid over methods, class counts and seeds; `base` supplies every
/// other setting.
#[derive(Clone, Debug)]
pub struct SweepPlan {
    pub base: RunConfig,
    pub methods: Vec<Method>,
    pub classes: Vec<usize>,
    pub seeds: Vec<u64>,
}

impl SweepPlan {
    pub fn cells(&self) -> Vec<Cell> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            for &classes in &self.classes {
                for &seed in &self.seeds {
                    cells.push(Cell { method, classes, seed });
                }
            }
        }
        cells
    }

    fn cell_config(&self, cell: Cell) -> TrainConfig {
        let mut cfg = self.base.clone();
        cfg.method = cell.method;
        cfg.mog.class_count = cell.classes;
        cfg.train_config(cell.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.classes.is_empty() || self.seeds.is_empty() {
            return Err(Error::config("sweep", "methods, classes and seeds must be non-empty"));
        }
        self.base.metrics.validate()?;
        for cell in self.cells() {
            self.cell_config(cell).validate()?;
        }
        Ok(())
    }

    /// Runs every cell on `jobs` worker threads. Finished cells with
    /// matching settings are reused; a failing cell is recorded and the
    /// sweep continues. Writes `summary.csv`, `aggregate.csv` and
    /// `failures.json` under the output directory.
    pub fn run(&self, jobs: usize, on_event: impl Fn(CellEvent<'_>) + Sync) -> Result<SweepOutcome> {
        self.validate()?;
        let root = &self.base.output_dir;
        create_dir(root)?;
        let cells = self.cells();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<CellResult>> = Mutex::new(Vec::new());
        let metrics = self.base.metrics;
        let worker = || loop {
            let k = next.fetch_add(1, Ordering::SeqCst);
            let Some(&cell) = cells.get(k) else { break };
            let train = self.cell_config(cell);
            let dir = run_dir(root, cell.method, cell.classes, cell.seed);
            let (result, trained) = match finished_run(&train, &metrics, &dir) {
                Some(report) => {
                    on_event(CellEvent::Reused(cell));
                    (Ok(report), false)
                }
                None => {
                    let r = run_one(&train, &metrics, &dir).map_err(|e| e.to_string());
                    match &r {
                        Ok(report) => on_event(CellEvent::Trained(cell, report)),
                        Err(msg) => on_event(CellEvent::Failed(cell, msg)),
                    }
                    (r, true)
                }
            };
            results.lock().unwrap_or_else(|p| p.into_inner()).push((cell, result, trained));
        };
        std::thread::scope(|s| {
            for _ in 0..jobs.max(1).min(cells.len()) {
                s.spawn(worker);
            }
        });

        let mut results = results.into_inner().unwrap_or_else(|p| p.into_inner());
        results.sort_by_key(|(cell, _, _)| *cell);
        let mut rows = Vec::new();
        let mut failures = Vec::new();
        let mut trained = 0;
        for (cell, result, was_trained) in results {
            trained += usize::from(was_trained);
            match result {
                Ok(report) => rows.push(SummaryRow {
                    method: cell.method,
                    classes: cell.classes,
                    seed: cell.seed,
                    w2: report.w2,
                    cw2_mean: report.cw2_mean,
                    is_failure: report.is_failure,
                }),
                Err(error) => failures.push(CellFailure { cell, error }),
            }
        }
        let aggregate = aggregate(&rows);
        write_atomic(&root.join(SUMMARY_FILE), summary_csv(&rows).as_bytes())?;
        write_atomic(&root.join(AGGREGATE_FILE), aggregate_csv(&aggregate).as_bytes())?;
        write_atomic(&root.join(FAILURES_FILE), to_json(&failures)?.as_bytes())?;
        Ok(SweepOutcome {
            rows,
            aggregate,
            failures,
            trained,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, classes: usize, seed: u64, cw2: f64, fail: bool) -> SummaryRow {
        SummaryRow {
            method,
            classes,
            seed,
            w2: cw2 / 2.0,
            cw2_mean: cw2,
            is_failure: fail,
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let ok = r#"{"method":"sona","mog":{"class_count":6},"output_dir":"out"}"#;
        let cfg = RunConfig::from_json(ok).unwrap();
        assert_eq!(cfg.train, TrainSection::default());
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
        let typo = r#"{"method":"sona","mog":{"class_count":6},"train":{"lr_g":0.1},"output_dir":"out"}"#;
        let err = RunConfig::from_json(typo).unwrap_err().to_string();
        assert!(err.contains("lr_g"), "{err}");
    }

    #[test]
    fn validation_names_the_field() {
        let mut cfg = RunConfig::new(Method::Sona, 6, "out");
        cfg.train.lr = -1.0;
        assert!(cfg.validate().unwrap_err().to_string().contains("adam.lr"));
        let mut cfg = RunConfig::new(Method::Sona, 6, "out");
        cfg.mog.class_count = 0;
        assert!(cfg.validate().unwrap_err().to_string().contains("mog.class_count"));
    }

    #[test]
    fn aggregate_counts_failures() {
        let rows = vec![
            row(Method::Pdgan, 6, 0, 0.1, true),
            row(Method::Pdgan, 6, 1, 0.3, false),
            row(Method::Pdgan, 6, 2, 0.2, true),
            row(Method::Sona, 6, 0, 0.05, false),
        ];
        let agg = aggregate(&rows);
        assert_eq!(agg.len(), 2);
        let pd = agg.iter().find(|a| a.method == Method::Pdgan).unwrap();
        assert_eq!((pd.runs, pd.nf), (3, 2));
        assert!((pd.cw2_mean - 0.2).abs() < 1e-15);
        assert!((pd.cw2_std - 0.1).abs() < 1e-15);
        let so = agg.iter().find(|a| a.method == Method::Sona).unwrap();
        assert_eq!((so.nf, so.cw2_std), (0, 0.0));
    }

    #[test]
    fn summary_csv_round_trips() {
        let rows = vec![row(Method::SonaNoMm, 36, 4, 0.1234567890123, true), row(Method::Sona, 6, 0, 1e-3, false)];
        let text = summary_csv(&rows);
        assert!(text.starts_with("method,N,seed,w2,cw2_mean,is_failure\nsona_no_mm,36,4,"));
        assert_eq!(parse_summary_csv(&text).unwrap(), rows);
    }
}
