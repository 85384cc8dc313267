//! Seeded experiment runs and their on-disk records.
//!
//! Each seed draws mini-batch indices from stream `(seed, 0)` and injected
//! noise from stream `(seed, 1)`, so a `(config, seed)` pair always replays
//! the same trajectory, whatever else runs alongside it.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use varreg_core::numerics::RngStream;
use varreg_core::optim::Optimizer;
use varreg_core::problems::{
    gaussian_blobs, linear_data, Dataset, IncrementStream, LinearRegression, LogisticRegression, Mlp, Problem, Quadratic,
};
use varreg_core::{Error as CoreError, ParamVector};

use crate::config::{DataSource, DataSpec, ExperimentConfig, ProblemSpec};
use crate::data::{load_csv_dataset, load_idx_dataset};
use crate::error::{HarnessError, Result};

/// Environment variable capping how many seeds run at once.
pub const THREADS_ENV: &str = "VR_OPTIM_THREADS";

const CONVERGENCE_WINDOW: usize = 50;
const CONVERGENCE_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    BudgetExhausted,
    Diverged,
}

/// One metrics tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub step: u64,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub lambda_mean: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rho_mean: Option<f64>,
    pub x_norm: f64,
    pub r: Option<f64>,
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<Row>,
    pub status: Status,
}

pub const CSV_HEADER: [&str; 11] =
    ["step", "train_loss", "eval_loss", "eval_accuracy", "lambda_mean", "lambda_min", "lambda_max", "rho_mean", "x_norm", "r", "wall_time"];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

fn format_opt(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

impl RunRecord {
    pub fn to_csv(&self) -> String {
        let mut out = CSV_HEADER.join(",");
        out.push('\n');
        for r in &self.rows {
            let cells = [
                r.step.to_string(),
                format_float(r.train_loss),
                format_opt(r.eval_loss),
                format_opt(r.eval_accuracy),
                format_float(r.lambda_mean),
                format_float(r.lambda_min),
                format_float(r.lambda_max),
                format_opt(r.rho_mean),
                format_float(r.x_norm),
                format_opt(r.r),
                format_float(r.wall_time),
            ];
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    /// Parses the rows written by [`RunRecord::to_csv`].
    pub fn rows_from_csv(text: &str, origin: &Path) -> Result<Vec<Row>> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| HarnessError::data(origin, e.to_string()))?.clone();
        if headers.iter().ne(CSV_HEADER.iter().copied()) {
            return Err(HarnessError::data(origin, format!("unexpected header {:?}", headers.iter().collect::<Vec<_>>())));
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| HarnessError::data(origin, format!("row {i}: {e}")))?;
            let num = |k: usize| -> Result<f64> {
                rec[k].parse().map_err(|_| HarnessError::data(origin, format!("row {i}, column {}: '{}'", CSV_HEADER[k], &rec[k])))
            };
            let opt = |k: usize| -> Result<Option<f64>> {
                if rec[k].is_empty() {
                    Ok(None)
                } else {
                    num(k).map(Some)
                }
            };
            rows.push(Row {
                step: rec[0].parse().map_err(|_| HarnessError::data(origin, format!("row {i}: bad step '{}'", &rec[0])))?,
                train_loss: num(1)?,
                eval_loss: opt(2)?,
                eval_accuracy: opt(3)?,
                lambda_mean: num(4)?,
                lambda_min: num(5)?,
                lambda_max: num(6)?,
                rho_mean: opt(7)?,
                x_norm: num(8)?,
                r: opt(9)?,
                wall_time: num(10)?,
            });
        }
        Ok(rows)
    }
}

fn load_dataset(config: &ExperimentConfig, spec: &DataSpec) -> Result<Dataset> {
    Ok(match &spec.source {
        DataSource::Blobs { rows, width, separation, seed } => {
            gaussian_blobs(*rows, *width, *separation, &mut RngStream::new(*seed, 0x000b_10b5))?
        }
        DataSource::Linear { rows, width, noise_sd, seed } => {
            linear_data(*rows, *width, *noise_sd, &mut RngStream::new(*seed, 0x000b_10b6))?
        }
        DataSource::Csv { path, label_column } => load_csv_dataset(&config.resolve(path), label_column)?,
        DataSource::Idx { images, labels, limit, normalize } => {
            load_idx_dataset(&config.resolve(images), &config.resolve(labels), *limit, *normalize)?
        }
    })
}

/// Splits off the held-out rows chosen by a seeded permutation.
fn split(data: Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Option<Dataset>)> {
    let n_eval = (fraction * data.len() as f64).floor() as usize;
    if n_eval == 0 {
        return Ok((data, None));
    }
    if n_eval >= data.len() {
        return Err(HarnessError::invalid("problem.data.eval_fraction", "leaves no training rows"));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    RngStream::new(seed, 0x5b11_7000).shuffle(&mut order);
    let take = |idx: &[usize]| -> Result<Dataset> {
        let mut feats = Vec::with_capacity(idx.len() * data.width());
        let mut labels = Vec::with_capacity(idx.len());
        for &i in idx {
            feats.extend_from_slice(data.row(i));
            labels.push(data.label(i));
        }
        Ok(Dataset::new(feats, labels, data.width())?)
    };
    let (eval_idx, train_idx) = order.split_at(n_eval);
    Ok((take(train_idx)?, Some(take(eval_idx)?)))
}

type ProblemPair = (Box<dyn Problem>, Option<Box<dyn Problem>>);

/// Builds the training problem and, when a split is configured, the
/// held-out evaluation problem.
pub fn build_problems(config: &ExperimentConfig) -> Result<ProblemPair> {
    if let ProblemSpec::Quadratic { dim, curvature, start } = &config.problem {
        let q = Quadratic::new(*curvature, *dim)?.with_start(ParamVector::filled(*dim, *start))?;
        return Ok((Box::new(q), None));
    }
    let spec = config.problem.data().expect("data-driven problem");
    let (train, eval) = split(load_dataset(config, spec)?, spec.eval_fraction, spec.split_seed)?;
    // the class count spans both halves so the two networks share a layout
    let classes = match &eval {
        Some(e) => class_count(&train).max(class_count(e)),
        None => class_count(&train),
    };
    let make = |d: Dataset| -> Result<Box<dyn Problem>> {
        Ok(match &config.problem {
            ProblemSpec::LinearRegression { ridge, .. } => Box::new(LinearRegression::new(d, *ridge)?),
            ProblemSpec::LogisticRegression { .. } => Box::new(LogisticRegression::new(d)?),
            ProblemSpec::Mlp { hidden, activation, init_seed, .. } => {
                let mut sizes = vec![d.width()];
                sizes.extend_from_slice(hidden);
                sizes.push(classes);
                Box::new(Mlp::new(&sizes, *activation, d, *init_seed)?.with_fused_batches(true))
            }
            ProblemSpec::Quadratic { .. } => unreachable!("handled above"),
        })
    };
    Ok((make(train)?, eval.map(make).transpose()?))
}

/// Number of classes implied by integer labels; 0 for real-valued targets.
fn class_count(d: &Dataset) -> usize {
    d.class_labels().map_or(0, |c| c.into_iter().max().map_or(1, |m| m + 1).max(2))
}

struct Ticker<'a> {
    problem: &'a dyn Problem,
    eval: Option<&'a dyn Problem>,
    x_star: Option<ParamVector>,
    started: Option<Instant>,
}

impl Ticker<'_> {
    fn row(&self, step: u64, x: &[f64], train_loss: f64, lambda: &[f64], rho: Option<&[f64]>, with_eval: bool) -> Row {
        let (eval_loss, eval_accuracy) = match (self.eval, with_eval) {
            (Some(e), true) => (Some(e.loss(x)), e.accuracy(x)),
            _ => (None, None),
        };
        let n = lambda.len() as f64;
        Row {
            step,
            train_loss,
            eval_loss,
            eval_accuracy,
            lambda_mean: lambda.iter().sum::<f64>() / n,
            lambda_min: lambda.iter().copied().fold(f64::INFINITY, f64::min),
            lambda_max: lambda.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            rho_mean: rho.map(|r| r.iter().sum::<f64>() / r.len() as f64),
            x_norm: x.iter().fold(0.0, |acc, v| acc + v * v).sqrt(),
            r: self.x_star.as_ref().map(|xs| xs.iter().zip(x).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b))),
            wall_time: self.started.map_or(0.0, |t| t.elapsed().as_secs_f64()),
        }
    }
}

/// Runs one seed to completion.
pub fn run_seed(config: &ExperimentConfig, problem: &dyn Problem, eval: Option<&dyn Problem>, seed: u64) -> Result<RunRecord> {
    let ticker = Ticker { problem, eval, x_star: problem.optimum().map(|(x, _)| x), started: config.metrics.wall_time.then(Instant::now) };
    let mut opt = Optimizer::new(config.optimizer.clone(), problem.initial_point(seed))?;
    let mut stream =
        IncrementStream::new(problem, config.noise.clone(), config.batch_size, RngStream::new(seed, 0), RngStream::new(seed, 1))?;
    let dim = problem.dim();
    let ones = vec![1.0; dim];
    let initial_loss = ticker.problem.loss(opt.x());
    let mut rows = vec![ticker.row(0, opt.x(), initial_loss, &ones, None, true)];
    let mut window: VecDeque<f64> = VecDeque::with_capacity(CONVERGENCE_WINDOW + 1);
    window.push_back(initial_loss);
    let budget = if config.epochs.is_some() { u64::MAX } else { config.steps };
    let mut status = Status::BudgetExhausted;
    let mut step = 0u64;
    while step < budget {
        let batch = stream.next_batch(opt.x());
        let report = match opt.step(&batch.increments) {
            Ok(r) => r,
            Err(CoreError::Diverged { .. } | CoreError::NonFinite { .. }) => {
                status = Status::Diverged;
                let loss = problem.loss(opt.x());
                rows.push(ticker.row(step + 1, opt.x(), loss, &ones, None, false));
                break;
            }
            Err(e) => return Err(e.into()),
        };
        step += 1;
        let epoch_done = stream.at_epoch_boundary();
        let eval_tick = eval.is_some() && epoch_done && stream.epoch() % config.metrics.eval_every_epochs == 0;
        let out_of_epochs = config.epochs.is_some_and(|e| epoch_done && stream.epoch() >= e);
        let tick = step.is_multiple_of(config.metrics.every) || eval_tick || step == budget || out_of_epochs;
        if !(tick || config.stop_on_convergence) {
            continue;
        }
        let loss = problem.loss(opt.x());
        if !loss.is_finite() {
            status = Status::Diverged;
        } else if config.stop_on_convergence {
            window.push_back(loss);
            if window.len() > CONVERGENCE_WINDOW + 1 {
                window.pop_front();
            }
            let old = window[0];
            if window.len() == CONVERGENCE_WINDOW + 1 && (old - loss).abs() <= CONVERGENCE_TOL * old.abs() {
                status = Status::Converged;
            }
        }
        let stop = status != Status::BudgetExhausted || out_of_epochs;
        if tick || stop {
            rows.push(ticker.row(step, opt.x(), loss, &report.lambda, report.rho.as_deref(), eval_tick || stop));
        }
        if stop {
            break;
        }
    }
    Ok(RunRecord { config_hash: config.hash(), seed, rows, status })
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()).filter(|&n| n > 0)
}

/// Runs every seed of the config in parallel; records come back in seed
/// order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let (problem, eval) = build_problems(config)?;
    let (problem, eval) = (problem.as_ref(), eval.as_deref());
    let work = || -> Result<Vec<RunRecord>> { config.seeds.par_iter().map(|&seed| run_seed(config, problem, eval, seed)).collect() };
    match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::invalid(THREADS_ENV, e.to_string()))?
            .install(work),
        None => work(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedEntry {
    pub seed: u64,
    pub file: String,
    pub status: Status,
    pub steps: u64,
}

/// JSON summary written next to the per-seed CSV files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub sampling: String,
    pub config: serde_json::Value,
    pub runs: Vec<SeedEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

pub fn seed_file_name(seed: u64) -> String {
    format!("seed_{seed}.csv")
}

/// Writes `seed_<n>.csv` per record plus `manifest.json`.
pub fn write_records(dir: &Path, config: &ExperimentConfig, records: &[RunRecord]) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut runs = Vec::with_capacity(records.len());
    for rec in records {
        let file = seed_file_name(rec.seed);
        let path = dir.join(&file);
        std::fs::write(&path, rec.to_csv()).map_err(|e| HarnessError::io(&path, e))?;
        runs.push(SeedEntry { seed: rec.seed, file, status: rec.status, steps: rec.rows.last().map_or(0, |r| r.step) });
    }
    let manifest = Manifest {
        name: config.name.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        sampling: crate::config::SAMPLING_SCHEME.to_string(),
        config: serde_json::to_value(config).expect("config serializes"),
        runs,
    };
    let path = dir.join(MANIFEST_FILE);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&path, text + "\n").map_err(|e| HarnessError::io(&path, e))?;
    Ok(path)
}

/// Reads back a directory produced by [`write_records`].
pub fn read_records(dir: &Path) -> Result<Vec<RunRecord>> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Parse { path: path.clone(), message: e.to_string() })?;
    manifest
        .runs
        .iter()
        .map(|entry| {
            let p = dir.join(&entry.file);
            let csv = std::fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))?;
            Ok(RunRecord {
                config_hash: manifest.config_hash.clone(),
                seed: entry.seed,
                rows: RunRecord::rows_from_csv(&csv, &p)?,
                status: entry.status,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn config(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml_str(text, Path::new("t.toml")).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let c = config("steps = 20\nseeds = [4]\n[problem]\nkind = \"quadratic\"\ndim = 2\n[optimizer]\nkind = \"vr_sgd\"\n[noise]\nschedule = { kind = \"constant\", variance = 1.0 }\n");
        let rec = run_experiment(&c).unwrap().remove(0);
        let back = RunRecord::rows_from_csv(&rec.to_csv(), Path::new("x")).unwrap();
        assert_eq!(back, rec.rows);
        assert_eq!(rec.rows.len(), 21);
        assert!(rec.rows.windows(2).all(|w| w[0].step < w[1].step));
    }

    #[test]
    fn zero_noise_gd_is_monotone() {
        let c = config("steps = 200\nbatch_size = 1\n[problem]\nkind = \"quadratic\"\ndim = 3\ncurvature = 2.0\nstart = 5.0\n[optimizer]\nkind = \"sgd\"\nlr = 0.5\n");
        let rec = run_experiment(&c).unwrap().remove(0);
        assert!(rec.rows.windows(2).all(|w| w[1].train_loss <= w[0].train_loss));
        assert_eq!(rec.status, Status::BudgetExhausted);
    }

    #[test]
    fn convergence_and_divergence_statuses() {
        let c = config("steps = 5000\nbatch_size = 1\nstop_on_convergence = true\n[problem]\nkind = \"quadratic\"\ndim = 1\n[optimizer]\nkind = \"sgd\"\nlr = 0.5\n");
        let rec = run_experiment(&c).unwrap().remove(0);
        assert_eq!(rec.status, Status::Converged);
        assert!(rec.rows.last().unwrap().step < 5000);
        let c = config("steps = 500\nbatch_size = 1\n[problem]\nkind = \"quadratic\"\ndim = 1\n[optimizer]\nkind = \"sgd\"\nlr = 5.0\n");
        let rec = run_experiment(&c).unwrap().remove(0);
        assert_eq!(rec.status, Status::Diverged);
        assert!(rec.rows.last().unwrap().step < 500);
    }

    #[test]
    fn vanishing_impact_reproduces_sgd() {
        let base = "steps = 100\nbatch_size = 8\nseeds = [1, 2]\n[problem]\nkind = \"logistic_regression\"\n[problem.data.source]\nkind = \"blobs\"\nrows = 64\nwidth = 3\n[noise]\nschedule = { kind = \"two_level\", low = 0.1, high = 10.0, block = 10 }\n";
        let sgd = run_experiment(&config(&format!("{base}[optimizer]\nkind = \"sgd\"\n"))).unwrap();
        let vr = run_experiment(&config(&format!("{base}[optimizer]\nkind = \"vr_sgd\"\nimpact = 0.0\n"))).unwrap();
        for (a, b) in sgd.iter().zip(&vr) {
            let la: Vec<f64> = a.rows.iter().map(|r| r.train_loss).collect();
            let lb: Vec<f64> = b.rows.iter().map(|r| r.train_loss).collect();
            assert_eq!(la, lb);
        }
    }

    #[test]
    fn epochs_budget_and_eval_split() {
        let c = config("epochs = 3\nbatch_size = 10\n[metrics]\nevery = 1000\n[problem]\nkind = \"mlp\"\nhidden = [4]\n[problem.data]\neval_fraction = 0.2\n[problem.data.source]\nkind = \"blobs\"\nrows = 50\nwidth = 2\n[optimizer]\nkind = \"sgd\"\nlr = 0.1\n");
        let rec = run_experiment(&c).unwrap().remove(0);
        // 40 training rows, 4 batches per epoch
        let steps: Vec<u64> = rec.rows.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 4, 8, 12]);
        assert!(rec.rows.iter().all(|r| r.eval_loss.is_some() && r.eval_accuracy.is_some()));
        assert!(rec.rows.iter().all(|r| r.r.is_none()));
    }

    #[test]
    fn thread_cap_does_not_change_records() {
        let c = config("steps = 50\nseeds = [1, 2, 3, 4]\n[problem]\nkind = \"quadratic\"\ndim = 4\n[optimizer]\nkind = \"vr_adam\"\n[noise]\nschedule = { kind = \"ramp\", start = 0.1, end = 2.0, steps = 50 }\n");
        let a = run_experiment(&c).unwrap();
        let b = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(|| run_experiment(&c).unwrap());
        assert_eq!(a, b);
    }
}
