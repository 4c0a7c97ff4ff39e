//! `sona`: train, sweep, plot and verify from the command line.
//!
//! Exit codes: 0 success, 1 verification or runtime failure, 2 invalid
//! config or arguments, 3 numerical abort.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use sona_core::experiment::{run_dir, run_one, CellEvent, RunConfig, SweepPlan};
use sona_core::trainer::Method;
use sona_core::Error;

pub mod plot;

/// Overrides `output_dir` of every config when set.
pub const OUTPUT_ROOT_ENV: &str = "SONA_OUTPUT_ROOT";

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sona", about = "Conditional GAN study on a 2D mixture of Gaussians")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one seed and write its run directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        classes: Option<usize>,
        /// Overrides train.iters.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Train every (method, N, seed) cell; finished cells are reused.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated methods.
        #[arg(long, value_delimiter = ',', default_value = "sona,sona_no_mm,pdgan")]
        methods: Vec<Method>,
        /// Comma-separated class counts.
        #[arg(long, value_delimiter = ',', default_value = "6,12,18,24,30,36")]
        classes: Vec<usize>,
        /// `a..b` (inclusive) or a comma-separated list.
        #[arg(long, default_value = "0..4")]
        seeds: String,
        /// Worker threads; defaults to the available cores.
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Draw scatter.svg and curves.svg from a run or sweep directory.
    Plot {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the oracle suite; exits 1 if any property fails.
    Verify {
        #[arg(long, hide = true)]
        inject_fault: Option<Fault>,
    },
}

/// Deliberate bugs for checking that `verify` notices them.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Fault {
    LogsigmoidGradSign,
}

/// Parses `0..4` (inclusive) or `0,3,7`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| format!("bad seed `{s}`"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty seed range `{text}`"));
        }
        return Ok((a..=b).collect());
    }
    text.split(',').map(num).collect()
}

fn exit_code(err: &anyhow::Error) -> i32 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config { .. } | Error::Json { .. }) => EXIT_CONFIG,
        Some(Error::NonFiniteLoss { .. }) => EXIT_NUMERIC,
        _ => EXIT_FAILURE,
    }
}

fn load_config(path: &Path) -> anyhow::Result<RunConfig> {
    let mut cfg = match RunConfig::load(path) {
        Ok(cfg) => cfg,
        // A config that cannot be read is a config error.
        Err(e @ Error::Io { .. }) => return Err(Error::Config {
            field: "config".into(),
            message: e.to_string(),
        }
        .into()),
        Err(e) => return Err(e.into()),
    };
    if let Some(root) = std::env::var_os(OUTPUT_ROOT_ENV) {
        cfg.output_dir = root.into();
    }
    Ok(cfg)
}

fn train(config: &Path, seed: Option<u64>, method: Option<Method>, classes: Option<usize>, iters: Option<usize>) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(m) = method {
        cfg.method = m;
    }
    if let Some(n) = classes {
        cfg.mog.class_count = n;
    }
    if let Some(t) = iters {
        cfg.train.iters = t;
    }
    if let Some(s) = seed {
        cfg.seeds = vec![s];
    }
    cfg.validate()?;
    let seed = cfg.seeds[0];
    let dir = run_dir(&cfg.output_dir, cfg.method, cfg.mog.class_count, seed);
    let report = run_one(&cfg.train_config(seed), &cfg.metrics, &dir)?;
    println!("{}", dir.display());
    println!(
        "w2 {:.6}  cw2_mean {:.6}  failure {}",
        report.w2, report.cw2_mean, report.is_failure
    );
    Ok(())
}

fn sweep(config: &Path, methods: Vec<Method>, classes: Vec<usize>, seeds: &str, jobs: Option<usize>) -> anyhow::Result<i32> {
    let base = load_config(config)?;
    let seeds = parse_seeds(seeds).map_err(|m| Error::Config {
        field: "seeds".into(),
        message: m,
    })?;
    let plan = SweepPlan {
        base,
        methods,
        classes,
        seeds,
    };
    let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let outcome = plan.run(jobs, |event| match event {
        CellEvent::Reused(c) => eprintln!("reuse  {} N={} seed={}", c.method, c.classes, c.seed),
        CellEvent::Trained(c, r) => eprintln!(
            "done   {} N={} seed={}  w2 {:.4} cw2 {:.4} failure {}",
            c.method, c.classes, c.seed, r.w2, r.cw2_mean, r.is_failure
        ),
        CellEvent::Failed(c, msg) => eprintln!("FAILED {} N={} seed={}: {msg}", c.method, c.classes, c.seed),
    })?;
    println!("method,N,runs,w2_mean,w2_std,cw2_mean,cw2_std,nf");
    for a in &outcome.aggregate {
        println!(
            "{},{},{},{:.5},{:.5},{:.5},{:.5},{}",
            a.method, a.classes, a.runs, a.w2_mean, a.w2_std, a.cw2_mean, a.cw2_std, a.nf
        );
    }
    Ok(if outcome.failures.is_empty() { EXIT_OK } else { EXIT_FAILURE })
}

fn verify(fault: Option<Fault>) -> i32 {
    sona_core::grad::inject_log_sigmoid_grad_flip(fault == Some(Fault::LogsigmoidGradSign));
    let checks = sona_core::verify::run_all();
    let mut failed = 0;
    for c in &checks {
        println!("{c}");
        failed += usize::from(!c.passed);
    }
    println!("{} properties, {failed} failed", checks.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_FAILURE
    }
}

/// Entry point shared by the binary and the tests.
pub fn main_with_args<I: IntoIterator<Item = OsString>>(args: I) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Train {
            config,
            seed,
            method,
            classes,
            iters,
        } => train(&config, seed, method, classes, iters).map(|()| EXIT_OK),
        Command::Sweep {
            config,
            methods,
            classes,
            seeds,
            jobs,
        } => sweep(&config, methods, classes, &seeds, jobs),
        Command::Plot { input, out } => plot::plot_dir(&input, &out).map(|()| EXIT_OK),
        Command::Verify { inject_fault } => Ok(verify(inject_fault)),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("3,1").unwrap(), vec![3, 1]);
        assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
        assert!(parse_seeds("4..1").is_err());
        assert!(parse_seeds("x").is_err());
    }
}
