//! Paired comparison of two sets of runs over the same seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{HarnessError, Result};
use crate::run::{format_float, Row, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    TrainLoss,
    /// Running mean of the training loss over recorded steps `1..=t`.
    AverageTrainLoss,
    EvalLoss,
    EvalAccuracy,
    LambdaMean,
    R,
}

impl Metric {
    pub const ALL: [Metric; 6] =
        [Metric::TrainLoss, Metric::AverageTrainLoss, Metric::EvalLoss, Metric::EvalAccuracy, Metric::LambdaMean, Metric::R];

    pub fn name(self) -> &'static str {
        match self {
            Metric::TrainLoss => "train_loss",
            Metric::AverageTrainLoss => "average_train_loss",
            Metric::EvalLoss => "eval_loss",
            Metric::EvalAccuracy => "eval_accuracy",
            Metric::LambdaMean => "lambda_mean",
            Metric::R => "r",
        }
    }

    /// Whether a smaller value counts as a win.
    pub fn lower_is_better(self) -> bool {
        !matches!(self, Metric::EvalAccuracy | Metric::LambdaMean)
    }

    fn series(self, rows: &[Row]) -> BTreeMap<u64, f64> {
        let mut sum = 0.0;
        let mut count = 0usize;
        rows.iter()
            .filter_map(|r| {
                let v = match self {
                    Metric::TrainLoss => Some(r.train_loss),
                    Metric::AverageTrainLoss => {
                        if r.step > 0 {
                            sum += r.train_loss;
                            count += 1;
                        }
                        (count > 0).then(|| sum / count as f64)
                    }
                    Metric::EvalLoss => r.eval_loss,
                    Metric::EvalAccuracy => r.eval_accuracy,
                    Metric::LambdaMean => Some(r.lambda_mean),
                    Metric::R => r.r,
                };
                v.map(|v| (r.step, v))
            })
            .collect()
    }
}

impl FromStr for Metric {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            HarnessError::invalid("metric", format!("unknown metric '{s}', expected one of {}", Metric::ALL.map(Metric::name).join(", ")))
        })
    }
}

/// Summary at one step shared by every run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub step: u64,
    pub median_a: f64,
    pub q25_a: f64,
    pub q75_a: f64,
    pub median_b: f64,
    pub q25_b: f64,
    pub q75_b: f64,
    /// Median over seeds of `b − a`.
    pub median_diff: f64,
    /// Fraction of seeds where `b` beats `a`; ties count one half.
    pub win_rate_b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub metric: Metric,
    pub seeds: Vec<u64>,
    pub rows: Vec<ComparisonRow>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

fn by_seed(runs: &[RunRecord]) -> Vec<&RunRecord> {
    let mut v: Vec<&RunRecord> = runs.iter().collect();
    v.sort_by_key(|r| r.seed);
    v
}

/// Pairs runs by seed and summarizes `metric` at every step recorded by
/// all of them.
pub fn compare_report(a: &[RunRecord], b: &[RunRecord], metric: Metric) -> Result<Comparison> {
    let (a, b) = (by_seed(a), by_seed(b));
    let seeds_a: Vec<u64> = a.iter().map(|r| r.seed).collect();
    let seeds_b: Vec<u64> = b.iter().map(|r| r.seed).collect();
    if seeds_a != seeds_b {
        return Err(HarnessError::invalid("seeds", format!("seed sets differ: {seeds_a:?} vs {seeds_b:?}")));
    }
    if seeds_a.is_empty() {
        return Err(HarnessError::invalid("seeds", "no runs to compare"));
    }
    let series_a: Vec<_> = a.iter().map(|r| metric.series(&r.rows)).collect();
    let series_b: Vec<_> = b.iter().map(|r| metric.series(&r.rows)).collect();
    let steps: Vec<u64> = series_a[0].keys().copied().filter(|t| series_a.iter().chain(&series_b).all(|s| s.contains_key(t))).collect();
    let n = seeds_a.len() as f64;
    let rows = steps
        .into_iter()
        .map(|step| {
            let va: Vec<f64> = series_a.iter().map(|s| s[&step]).collect();
            let vb: Vec<f64> = series_b.iter().map(|s| s[&step]).collect();
            let diffs = sorted(va.iter().zip(&vb).map(|(x, y)| y - x).collect());
            let wins: f64 = va
                .iter()
                .zip(&vb)
                .map(|(x, y)| {
                    let better = if metric.lower_is_better() { y < x } else { y > x };
                    if x == y {
                        0.5
                    } else if better {
                        1.0
                    } else {
                        0.0
                    }
                })
                .sum();
            let (sa, sb) = (sorted(va), sorted(vb));
            ComparisonRow {
                step,
                median_a: quantile(&sa, 0.5),
                q25_a: quantile(&sa, 0.25),
                q75_a: quantile(&sa, 0.75),
                median_b: quantile(&sb, 0.5),
                q25_b: quantile(&sb, 0.25),
                q75_b: quantile(&sb, 0.75),
                median_diff: quantile(&diffs, 0.5),
                win_rate_b: wins / n,
            }
        })
        .collect();
    Ok(Comparison { metric, seeds: seeds_a, rows })
}

impl Comparison {
    pub fn last(&self) -> Option<&ComparisonRow> {
        self.rows.last()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,median_a,q25_a,q75_a,median_b,q25_b,q75_b,median_diff,win_rate_b\n");
        for r in &self.rows {
            let vals = [r.median_a, r.q25_a, r.q75_a, r.median_b, r.q25_b, r.q75_b, r.median_diff, r.win_rate_b];
            let cells: Vec<String> = vals.iter().map(|&v| format_float(v)).collect();
            let _ = writeln!(out, "{},{}", r.step, cells.join(","));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::Status;

    fn record(seed: u64, losses: &[f64]) -> RunRecord {
        let rows = losses
            .iter()
            .enumerate()
            .map(|(i, &l)| Row {
                step: i as u64,
                train_loss: l,
                eval_loss: None,
                eval_accuracy: None,
                lambda_mean: 1.0,
                lambda_min: 1.0,
                lambda_max: 1.0,
                rho_mean: None,
                x_norm: 0.0,
                r: None,
                wall_time: 0.0,
            })
            .collect();
        RunRecord { config_hash: String::new(), seed, rows, status: Status::BudgetExhausted }
    }

    fn runs(shift: f64) -> Vec<RunRecord> {
        (0..7).map(|s| record(s, &[3.0 + s as f64 + shift, 2.0 * s as f64 + shift, 1.0 / (s + 1) as f64 + shift])).collect()
    }

    #[test]
    fn identical_runs_tie() {
        let c = compare_report(&runs(0.0), &runs(0.0), Metric::TrainLoss).unwrap();
        assert!(c.rows.iter().all(|r| r.win_rate_b == 0.5 && r.median_diff == 0.0));
    }

    #[test]
    fn uniformly_lower_b_always_wins() {
        let c = compare_report(&runs(0.0), &runs(-1.0), Metric::TrainLoss).unwrap();
        assert!(c.rows.iter().all(|r| r.win_rate_b == 1.0 && r.median_diff == -1.0));
    }

    #[test]
    fn swapping_negates_and_complements() {
        let a = runs(0.0);
        let mut b = runs(0.0);
        b[2].rows[1].train_loss = 100.0;
        b[5].rows[2].train_loss = -4.0;
        let ab = compare_report(&a, &b, Metric::AverageTrainLoss).unwrap();
        let ba = compare_report(&b, &a, Metric::AverageTrainLoss).unwrap();
        for (x, y) in ab.rows.iter().zip(&ba.rows) {
            assert_eq!(x.median_diff, -y.median_diff);
            assert!((x.win_rate_b + y.win_rate_b - 1.0).abs() < 1e-15);
            assert_eq!((x.median_a, x.q25_a), (y.median_b, y.q25_b));
        }
    }

    #[test]
    fn statistics_match_recomputation() {
        let a = runs(0.0);
        let b: Vec<RunRecord> = (0..7).map(|s| record(s, &[1.0, s as f64 * 0.5, 3.0 - s as f64])).collect();
        let c = compare_report(&a, &b, Metric::AverageTrainLoss).unwrap();
        let last = c.last().unwrap();
        // seed s: a averages 2s and 1/(s+1); b averages 0.5s and 3 − s
        let mut avg_a: Vec<f64> = (0..7).map(|s| (2.0 * s as f64 + 1.0 / (s + 1) as f64) / 2.0).collect();
        let mut avg_b: Vec<f64> = (0..7).map(|s| (0.5 * s as f64 + 3.0 - s as f64) / 2.0).collect();
        let wins: f64 = avg_a
            .iter()
            .zip(&avg_b)
            .map(|(x, y)| {
                if y < x {
                    1.0
                } else if y == x {
                    0.5
                } else {
                    0.0
                }
            })
            .sum();
        avg_a.sort_by(f64::total_cmp);
        avg_b.sort_by(f64::total_cmp);
        assert_eq!(last.step, 2);
        assert_eq!(last.median_a, avg_a[3]);
        assert_eq!(last.median_b, avg_b[3]);
        assert_eq!(last.q25_a, avg_a[1] + 0.5 * (avg_a[2] - avg_a[1]));
        assert_eq!(last.win_rate_b, wins / 7.0);
        assert_eq!(c.rows[0].step, 1);
    }

    #[test]
    fn mismatched_seeds_are_rejected() {
        let mut b = runs(0.0);
        b[0].seed = 99;
        assert!(compare_report(&runs(0.0), &b, Metric::TrainLoss).is_err());
        assert!("nope".parse::<Metric>().is_err());
        assert_eq!("eval_accuracy".parse::<Metric>().unwrap(), Metric::EvalAccuracy);
    }
}
