//! Command-line front end.
//!
//! Exit codes: 0 when everything requested passed, 1 when a check failed,
//! 2 for usage, configuration and I/O errors.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use varreg_core::optim::OptimizerKind;
use varreg_core::stats::NormalizationMode;
use varreg_core::theory::{self, AuditSizes, CheckReport};
use varreg_core::RngStream;

use crate::compare::{compare_report, Metric};
use crate::config::{load_config, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::run::{build_problems, read_records, run_experiment, write_records, Status, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(name = "varreg", version, about = "Variance-regularized optimizer experiments and theory checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment config and write per-seed CSV records.
    Run(RunArgs),
    /// Compare two run directories seed by seed.
    Compare(CompareArgs),
    /// Run the numerical theory audits.
    VerifyTheory(VerifyArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Print version and determinism settings.
    Info,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// mean_normalized or algorithm_literal
    #[arg(long)]
    mode: Option<String>,
    /// Impact factor.
    #[arg(long)]
    s: Option<f64>,
    /// sgd, vr_sgd, momentum, adam or vr_adam
    #[arg(long)]
    optimizer: Option<String>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Baseline run directory.
    #[arg(long)]
    a: PathBuf,
    /// Candidate run directory.
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "train_loss")]
    metric: String,
    /// Where to write the comparison CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Audit to run; repeat for several. Default: all.
    #[arg(long)]
    suite: Vec<String>,
    /// Seed count for the Monte Carlo audits.
    #[arg(long)]
    seeds: Option<usize>,
    /// Base seed.
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    /// Check this config's problem instead of the built-in model zoo.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    points: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn by_name<T: serde::de::DeserializeOwned>(field: &str, name: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| HarnessError::invalid(field, format!("unrecognized value '{name}'")))
}

fn apply_overrides(config: &mut ExperimentConfig, args: &RunArgs) -> Result<()> {
    if let Some(seeds) = &args.seed {
        config.seeds = seeds.clone();
    }
    if let Some(steps) = args.steps {
        config.steps = steps;
        config.epochs = None;
    }
    if let Some(out) = &args.out {
        config.output.dir = Some(out.clone());
    }
    if let Some(mode) = &args.mode {
        config.optimizer.vr_mode = by_name::<NormalizationMode>("--mode", mode)?;
    }
    if let Some(s) = args.s {
        config.optimizer.impact = s;
    }
    if let Some(kind) = &args.optimizer {
        config.optimizer.kind = by_name::<OptimizerKind>("--optimizer", kind)?;
    }
    config.validate()
}

fn print_table(reports: &[CheckReport]) {
    let width = reports.iter().map(|r| r.name.len()).max().unwrap_or(0);
    for r in reports {
        println!("{:<width$}  {}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.summary);
    }
}

fn cmd_run(args: &RunArgs) -> Result<i32> {
    let mut config = load_config(&args.config)?;
    apply_overrides(&mut config, args)?;
    let records = run_experiment(&config)?;
    for rec in &records {
        let last = rec.rows.last().expect("initial row");
        println!("seed {:>6}  {:?}  step {}  loss {:.6e}", rec.seed, rec.status, last.step, last.train_loss);
    }
    if let Some(dir) = &config.output.dir {
        let dir = if dir.is_relative() && args.out.is_none() { config.resolve(dir) } else { dir.clone() };
        let manifest = write_records(&dir, &config, &records)?;
        println!("wrote {}", manifest.display());
    }
    let diverged = records.iter().filter(|r| r.status == Status::Diverged).count();
    if diverged > 0 {
        eprintln!("{diverged} of {} seeds diverged", records.len());
    }
    Ok(0)
}

fn cmd_compare(args: &CompareArgs) -> Result<i32> {
    let metric: Metric = args.metric.parse()?;
    let c = compare_report(&read_records(&args.a)?, &read_records(&args.b)?, metric)?;
    if let Some(last) = c.last() {
        println!(
            "{} at step {} over {} seeds: median a {:.6e}, median b {:.6e}, median b-a {:.3e}, win rate b {:.3}",
            metric.name(),
            last.step,
            c.seeds.len(),
            last.median_a,
            last.median_b,
            last.median_diff,
            last.win_rate_b
        );
    }
    match &args.out {
        Some(path) => std::fs::write(path, c.to_csv()).map_err(|e| HarnessError::io(path, e))?,
        None => print!("{}", c.to_csv()),
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32> {
    let mut sizes = AuditSizes::default();
    if let Some(n) = args.seeds {
        if n < 2 {
            return Err(HarnessError::invalid("--seeds", "need at least 2 seeds"));
        }
        sizes.lemma1_seeds = n;
        sizes.theorem1_seeds = n;
        sizes.theorem2_seeds = n;
        sizes.lyapunov_seeds = n;
    }
    let suites: Vec<&str> = if args.suite.is_empty() { theory::SUITES.to_vec() } else { args.suite.iter().map(String::as_str).collect() };
    if let Some(bad) = suites.iter().find(|s| !theory::SUITES.contains(s)) {
        return Err(HarnessError::invalid("--suite", format!("unknown suite '{bad}', expected one of {}", theory::SUITES.join(", "))));
    }
    let reports = suites.iter().map(|s| theory::run_suite(s, &sizes, args.seed)).collect::<std::result::Result<Vec<_>, _>>()?;
    print_table(&reports);
    Ok(if reports.iter().all(|r| r.passed) { 0 } else { 1 })
}

fn cmd_gradcheck(args: &GradcheckArgs) -> Result<i32> {
    let report = match &args.config {
        None => theory::audit_gradients(args.points, args.seed)?,
        Some(path) => {
            let config = load_config(path)?;
            let (problem, _) = build_problems(&config)?;
            let mut rng = RngStream::new(args.seed, 0);
            let n = problem.num_samples().unwrap_or(1);
            let mut worst = 0.0f64;
            for k in 0..args.points {
                let x: Vec<f64> = (0..problem.dim()).map(|_| rng.standard_normal()).collect();
                worst = worst.max(varreg_core::problems::finite_difference_check(problem.as_ref(), &x, k % n, 1e-6).relative_error);
            }
            let tol = if problem.is_convex() { 1e-5 } else { 1e-4 };
            CheckReport {
                name: "gradients".into(),
                passed: worst < tol,
                summary: format!("{}: max relative error {worst:.2e} over {} points (tolerance {tol:.0e})", problem.name(), args.points),
                metrics: vec![(problem.name().to_string(), worst)],
            }
        }
    };
    print_table(std::slice::from_ref(&report));
    Ok(if report.passed { 0 } else { 1 })
}

fn cmd_info() -> i32 {
    println!("varreg {}", env!("CARGO_PKG_VERSION"));
    println!("rng: ChaCha8 keyed by (seed, stream), one stream per seed for sampling and one for noise");
    println!("reductions: fixed left-to-right order; seeds aggregated in seed order");
    println!("floats: CSV written with 17 significant digits");
    println!("wall-time column: off unless [metrics] wall_time = true");
    println!("debug assertions: {}", cfg!(debug_assertions));
    println!("target: {}-{}", std::env::consts::ARCH, std::env::consts::OS);
    match std::env::var(THREADS_ENV) {
        Ok(v) => println!("{THREADS_ENV}: {v}"),
        Err(_) => println!("{THREADS_ENV}: unset (all cores)"),
    }
    0
}

/// Parses `argv` (program name first) and runs the command.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Compare(a) => cmd_compare(a),
        Command::VerifyTheory(a) => cmd_verify(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Info => Ok(cmd_info()),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            2
        }
    }
}
