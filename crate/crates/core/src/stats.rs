//! Mini-batch statistics and the bounded variance regularizer.
//!
//! For a batch of per-sample increments `δ_1..δ_m` this module computes the
//! batch mean `δ̄`, the within-batch variance `v² = (1/m) Σ (δ_i − δ̄)²` and
//! the scale-free variance `ρ = v² / δ̄²`. A [`RegularizerState`] accumulates
//! the history of `ρ` and turns each new value into a per-parameter
//! learning-rate multiplier
//!
//! ```text
//! λ = (1 + s) / (1 + s · ρ / ρ̄)
//! ```
//!
//! which is `1` whenever the current `ρ` equals its history mean, at most
//! `1 + s` when the batch carries no variance, and decreasing in `ρ`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean_of, ParamVector, RngStream};

/// Floor applied to `|δ̄|` before it divides `v²`.
pub const DEFAULT_GUARD: f64 = 1e-8;

/// Upper clamp on the scale-free variance.
pub const RHO_CAP: f64 = 1e12;

/// Impact factor used unless configured otherwise.
pub const DEFAULT_IMPACT: f64 = 2.0;

/// Statistics of one mini-batch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    /// Elementwise mean of the per-sample increments.
    pub mean_increment: ParamVector,
    /// Within-batch variance with `1/m` normalization. Same length as
    /// `mean_increment` for per-parameter statistics, length one for the
    /// global-scalar variant.
    pub variance: ParamVector,
    /// `variance / max(mean², guard²)`, clamped to [`RHO_CAP`].
    pub scale_free: ParamVector,
    pub batch_size: usize,
}

fn check_batch(increments: &[ParamVector]) -> Result<usize> {
    let first = increments.first().ok_or(Error::Empty("mini-batch with no samples"))?;
    for v in increments {
        if v.len() != first.len() {
            return Err(Error::ShapeMismatch { left: first.len(), right: v.len() });
        }
    }
    Ok(first.len())
}

/// `v² / max(δ̄², guard²)`, clamped to `[0, RHO_CAP]`.
#[inline]
pub fn scale_free_variance(variance: f64, mean: f64, guard: f64) -> f64 {
    let denom = (mean * mean).max(guard * guard);
    (variance / denom).min(RHO_CAP)
}

/// Per-parameter batch statistics (two-pass variance).
pub fn minibatch_stats(increments: &[ParamVector], guard: f64) -> Result<BatchStats> {
    let dim = check_batch(increments)?;
    let mean = mean_of(increments)?;
    let m = increments.len() as f64;
    let mut var = vec![0.0; dim];
    for v in increments {
        for ((acc, x), mu) in var.iter_mut().zip(v.iter()).zip(mean.iter()) {
            let d = x - mu;
            *acc += d * d;
        }
    }
    for acc in &mut var {
        *acc /= m;
    }
    let rho = var.iter().zip(mean.iter()).map(|(&v2, &mu)| scale_free_variance(v2, mu, guard)).collect();
    Ok(BatchStats {
        mean_increment: mean,
        variance: ParamVector::new(var)?,
        scale_free: ParamVector::new(rho)?,
        batch_size: increments.len(),
    })
}

/// Global-scalar batch statistics: the variance is the mean squared distance
/// of the samples to the batch mean, and `ρ` divides it by `‖δ̄‖²`.
pub fn minibatch_stats_global(increments: &[ParamVector], guard: f64) -> Result<BatchStats> {
    check_batch(increments)?;
    let mean = mean_of(increments)?;
    let m = increments.len() as f64;
    let mut total = 0.0;
    for v in increments {
        for (x, mu) in v.iter().zip(mean.iter()) {
            let d = x - mu;
            total += d * d;
        }
    }
    let var = total / m;
    let norm_sq = mean.iter().fold(0.0, |acc, x| acc + x * x);
    let rho = (var / norm_sq.max(guard * guard)).min(RHO_CAP);
    Ok(BatchStats {
        mean_increment: mean,
        variance: ParamVector::new(vec![var])?,
        scale_free: ParamVector::new(vec![rho])?,
        batch_size: increments.len(),
    })
}

/// One-pass scale-free variance `(1/(m δ̄²)) Σ δ_i² − 1`, unguarded.
///
/// Algebraically equal to the two-pass `v² / δ̄²`; kept separate so the two
/// routes can be compared.
pub fn scale_free_one_pass(increments: &[ParamVector]) -> Result<ParamVector> {
    let dim = check_batch(increments)?;
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    for v in increments {
        for ((s, q), x) in sum.iter_mut().zip(sum_sq.iter_mut()).zip(v.iter()) {
            *s += x;
            *q += x * x;
        }
    }
    let m = increments.len() as f64;
    let rho = sum
        .iter()
        .zip(&sum_sq)
        .map(|(&s, &q)| {
            let mean = s / m;
            q / (m * mean * mean) - 1.0
        })
        .collect();
    ParamVector::new(rho)
}

/// How the current `ρ` is compared with its history.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationMode {
    /// `ρ_t / (Ω_t / t)`: compare with the running mean.
    #[default]
    MeanNormalized,
    /// `ρ_t / Ω_t`: compare with the running sum, as the reference
    /// pseudocode writes it.
    AlgorithmLiteral,
}

/// Whether one multiplier is computed per coordinate or for the whole vector.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    #[default]
    PerParameter,
    GlobalScalar,
}

/// The bounded regularizer `(1 + s) / (1 + s · ratio)`.
#[inline]
pub fn bounded_lambda(ratio: f64, s: f64) -> f64 {
    (1.0 + s) / (1.0 + s * ratio)
}

/// Running history of the scale-free variance and the impact factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizerState {
    impact: f64,
    omega: ParamVector,
    t: u64,
    mode: NormalizationMode,
    guard: f64,
}

impl RegularizerState {
    pub fn new(dim: usize, impact: f64, mode: NormalizationMode) -> Result<Self> {
        if !(impact.is_finite() && impact >= 0.0) {
            return Err(Error::InvalidArgument(format!("impact factor must be finite and >= 0, got {impact}")));
        }
        if dim == 0 {
            return Err(Error::Empty("regularizer over zero parameters"));
        }
        Ok(RegularizerState { impact, omega: ParamVector::zeros(dim), t: 0, mode, guard: DEFAULT_GUARD })
    }

    pub fn with_guard(mut self, guard: f64) -> Result<Self> {
        if !(guard.is_finite() && guard > 0.0) {
            return Err(Error::InvalidArgument(format!("guard must be finite and > 0, got {guard}")));
        }
        self.guard = guard;
        Ok(self)
    }

    pub fn impact(&self) -> f64 {
        self.impact
    }

    pub fn set_impact(&mut self, impact: f64) -> Result<()> {
        if !(impact.is_finite() && impact >= 0.0) {
            return Err(Error::InvalidArgument(format!("impact factor must be finite and >= 0, got {impact}")));
        }
        self.impact = impact;
        Ok(())
    }

    pub fn omega(&self) -> &ParamVector {
        &self.omega
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn mode(&self) -> NormalizationMode {
        self.mode
    }

    pub fn guard(&self) -> f64 {
        self.guard
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    /// `Ω / t`, or zeros before any history exists.
    pub fn history_mean(&self) -> ParamVector {
        let mut mean = self.omega.clone();
        if self.t > 0 {
            let t = self.t as f64;
            mean.iter_mut().for_each(|v| *v /= t);
        }
        mean
    }

    /// `Ω += ρ`, `t += 1`.
    pub fn update_history(&mut self, rho: &ParamVector) -> Result<()> {
        if rho.len() != self.omega.len() {
            return Err(Error::ShapeMismatch { left: self.omega.len(), right: rho.len() });
        }
        if let Some(index) = rho.iter().position(|&r| !(r >= 0.0) || !r.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        for (o, r) in self.omega.iter_mut().zip(rho.iter()) {
            *o += r;
        }
        self.t += 1;
        Ok(())
    }

    /// Multiplier for the current `ρ`, given a history that already includes
    /// it. Before any history exists, and on coordinates whose history is all
    /// zero, the multiplier is 1.
    pub fn lambda(&self, rho: &ParamVector) -> Result<ParamVector> {
        if rho.len() != self.omega.len() {
            return Err(Error::ShapeMismatch { left: self.omega.len(), right: rho.len() });
        }
        if self.t == 0 {
            return Ok(ParamVector::filled(rho.len(), 1.0));
        }
        let t = self.t as f64;
        let lambda = rho
            .iter()
            .zip(self.omega.iter())
            .map(|(&r, &omega)| {
                if omega <= 0.0 {
                    return 1.0;
                }
                let reference = match self.mode {
                    NormalizationMode::MeanNormalized => omega / t,
                    NormalizationMode::AlgorithmLiteral => omega,
                };
                bounded_lambda(r / reference, self.impact)
            })
            .collect();
        ParamVector::new(lambda)
    }

    /// Fold `ρ` into the history, then return its multiplier.
    pub fn observe(&mut self, rho: &ParamVector) -> Result<ParamVector> {
        self.update_history(rho)?;
        self.lambda(rho)
    }
}

/// Amplitude `1 + 1/e` that makes [`sigmoid_regularizer`] equal 1 when the
/// current variance equals the mean variance.
pub fn unit_sigmoid_amplitude() -> f64 {
    1.0 + (-1.0f64).exp()
}

/// Impact factor that makes the bounded form agree with the sigmoid form to
/// first order in the relative variance deviation: `(1 + λ0/2) / (e − λ0/2)`.
pub fn impact_from_lambda0(lambda0: f64) -> f64 {
    (1.0 + lambda0 / 2.0) / (std::f64::consts::E - lambda0 / 2.0)
}

/// Sigmoid squashing of the unconstrained optimal regularizer:
/// `a / (1 + exp[λ0/2 − (1 + λ0/2) σ̄² / σ_t²])`.
pub fn sigmoid_regularizer(sigma_t2: f64, sigma_bar2: f64, lambda0: f64, amplitude: f64) -> Result<f64> {
    if !(sigma_t2 > 0.0 && sigma_bar2 > 0.0 && lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "sigmoid regularizer needs positive variances and λ0 (got σ_t²={sigma_t2}, σ̄²={sigma_bar2}, λ0={lambda0})"
        )));
    }
    let half = lambda0 / 2.0;
    let exponent = half - (1.0 + half) * sigma_bar2 / sigma_t2;
    Ok(amplitude / (1.0 + exponent.exp()))
}

/// Monte Carlo estimates from [`cochran_scaling_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CochranEstimate {
    /// Sample mean of the within-batch variance `v²`.
    pub mean_batch_variance: f64,
    /// Sample variance of the batch mean `δ̄` across batches.
    pub variance_of_mean: f64,
    /// `(m − 1)/m · σ0²`.
    pub expected_batch_variance: f64,
    /// `σ0² / m`.
    pub expected_variance_of_mean: f64,
}

/// Draws `batches` mini-batches of `m` i.i.d. `N(0, σ0²)` increments and
/// estimates `E[v²]` and `Var(δ̄)`.
pub fn cochran_scaling_check(m: usize, sigma0_sq: f64, batches: usize, rng: &mut RngStream) -> Result<CochranEstimate> {
    if m == 0 || batches < 2 {
        return Err(Error::InvalidArgument(format!("need m >= 1 and at least two batches (m={m}, batches={batches})")));
    }
    if !(sigma0_sq >= 0.0) {
        return Err(Error::InvalidArgument(format!("σ0² must be >= 0, got {sigma0_sq}")));
    }
    let sd = sigma0_sq.sqrt();
    let mf = m as f64;
    let mut samples = vec![0.0; m];
    let mut v2_sum = 0.0;
    let mut means = Vec::with_capacity(batches);
    for _ in 0..batches {
        samples.iter_mut().for_each(|x| *x = sd * rng.standard_normal());
        let mean = samples.iter().sum::<f64>() / mf;
        let v2 = samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / mf;
        v2_sum += v2;
        means.push(mean);
    }
    let n = batches as f64;
    let grand = means.iter().sum::<f64>() / n;
    let var_mean = means.iter().map(|x| (x - grand) * (x - grand)).sum::<f64>() / (n - 1.0);
    Ok(CochranEstimate {
        mean_batch_variance: v2_sum / n,
        variance_of_mean: var_mean,
        expected_batch_variance: (mf - 1.0) / mf * sigma0_sq,
        expected_variance_of_mean: sigma0_sq / mf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn batch(rows: &[&[f64]]) -> Vec<ParamVector> {
        rows.iter().map(|r| pv(r)).collect()
    }

    #[test]
    fn identical_samples_have_zero_variance() {
        let st = minibatch_stats(&batch(&[&[1.0], &[1.0], &[1.0], &[1.0]]), DEFAULT_GUARD).unwrap();
        assert_eq!(st.mean_increment, pv(&[1.0]));
        assert_eq!(st.variance, pv(&[0.0]));
        assert_eq!(st.scale_free, pv(&[0.0]));
        assert_eq!(st.batch_size, 4);
    }

    #[test]
    fn two_sample_hand_example() {
        let st = minibatch_stats(&batch(&[&[1.0], &[3.0]]), DEFAULT_GUARD).unwrap();
        assert_eq!(st.mean_increment, pv(&[2.0]));
        assert_eq!(st.variance, pv(&[1.0]));
        assert_eq!(st.scale_free, pv(&[0.25]));
    }

    #[test]
    fn zero_gradient_takes_guard_path() {
        let st = minibatch_stats(&batch(&[&[0.0], &[0.0]]), DEFAULT_GUARD).unwrap();
        assert_eq!(st.scale_free, pv(&[0.0]));
        // Tiny mean but real spread: v² / guard², capped.
        let st = minibatch_stats(&batch(&[&[-1.0], &[1.0]]), DEFAULT_GUARD).unwrap();
        assert_eq!(st.scale_free, pv(&[RHO_CAP]));
    }

    #[test]
    fn batch_errors() {
        assert!(minibatch_stats(&[], DEFAULT_GUARD).is_err());
        let err = minibatch_stats(&batch(&[&[1.0, 2.0], &[1.0]]), DEFAULT_GUARD).unwrap_err();
        assert_eq!(err, Error::ShapeMismatch { left: 2, right: 1 });
    }

    #[test]
    fn global_scalar_stats() {
        let st = minibatch_stats_global(&batch(&[&[1.0, 0.0], &[3.0, 2.0]]), DEFAULT_GUARD).unwrap();
        // mean (2, 1); squared distances 1+1 and 1+1 -> v² = 2; ‖δ̄‖² = 5
        assert_eq!(st.mean_increment, pv(&[2.0, 1.0]));
        assert_eq!(st.variance, pv(&[2.0]));
        assert!((st.scale_free[0] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn lambda_examples() {
        let mut state = RegularizerState::new(1, 2.0, NormalizationMode::MeanNormalized).unwrap();
        state.update_history(&pv(&[0.5])).unwrap();
        // ρ equal to its history mean
        assert_eq!(state.lambda(&pv(&[0.5])).unwrap(), pv(&[1.0]));
        // zero variance hits the upper bound
        assert_eq!(state.lambda(&pv(&[0.0])).unwrap(), pv(&[3.0]));
        // ratio 4 -> 3/9
        assert!((state.lambda(&pv(&[2.0])).unwrap()[0] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_is_one_without_history() {
        let state = RegularizerState::new(3, 2.0, NormalizationMode::MeanNormalized).unwrap();
        assert_eq!(state.lambda(&pv(&[5.0, 0.0, 1.0])).unwrap(), pv(&[1.0, 1.0, 1.0]));
        let mut state = RegularizerState::new(1, 2.0, NormalizationMode::AlgorithmLiteral).unwrap();
        // all-zero history on a coordinate
        assert_eq!(state.observe(&pv(&[0.0])).unwrap(), pv(&[1.0]));
    }

    #[test]
    fn algorithm_literal_divides_by_the_sum() {
        let mut state = RegularizerState::new(1, 2.0, NormalizationMode::AlgorithmLiteral).unwrap();
        assert_eq!(state.observe(&pv(&[2.0])).unwrap(), pv(&[1.0]));
        // Ω = 4, ρ/Ω = 0.5 -> 3 / 2
        assert_eq!(state.observe(&pv(&[2.0])).unwrap(), pv(&[1.5]));
    }

    #[test]
    fn update_history_examples() {
        let mut state = RegularizerState::new(1, 2.0, NormalizationMode::MeanNormalized).unwrap();
        state.update_history(&pv(&[2.0])).unwrap();
        assert_eq!((state.omega().clone(), state.steps()), (pv(&[2.0]), 1));
        state.update_history(&pv(&[4.0])).unwrap();
        assert_eq!((state.omega().clone(), state.steps()), (pv(&[6.0]), 2));
        assert_eq!(state.history_mean(), pv(&[3.0]));
        state.update_history(&pv(&[0.0])).unwrap();
        assert_eq!((state.omega().clone(), state.steps()), (pv(&[6.0]), 3));
        assert!(state.update_history(&pv(&[1.0, 1.0])).is_err());
        assert!(state.update_history(&pv(&[-1.0])).is_err());
    }

    #[test]
    fn homoskedastic_history_gives_unit_lambda() {
        let mut state = RegularizerState::new(2, 2.0, NormalizationMode::MeanNormalized).unwrap();
        for _ in 0..64 {
            let lambda = state.observe(&pv(&[0.25, 3.0])).unwrap();
            assert_eq!(lambda, pv(&[1.0, 1.0]));
        }
        // Non-dyadic values agree to rounding.
        let mut state = RegularizerState::new(1, 2.0, NormalizationMode::MeanNormalized).unwrap();
        for _ in 0..1000 {
            let lambda = state.observe(&pv(&[0.1])).unwrap();
            assert!((lambda[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_examples() {
        let a = unit_sigmoid_amplitude();
        assert!((a - 1.367_879_441_171_442_2).abs() < 1e-15);
        assert!((sigmoid_regularizer(0.7, 0.7, 2.0, a).unwrap() - 1.0).abs() < 1e-15);
        let limit = a / (1.0 + 1.0f64.exp());
        assert!((sigmoid_regularizer(1e12, 1.0, 2.0, a).unwrap() - limit).abs() < 1e-10);
        assert!(sigmoid_regularizer(0.0, 1.0, 2.0, a).is_err());
    }

    #[test]
    fn sigmoid_and_bounded_form_agree_to_second_order() {
        // Bounded form with the matched impact factor vs the sigmoid, at a
        // 10% variance excursion. Both are 1 at the center and share the
        // first derivative, so the gap is O(0.1²).
        let lambda0 = 2.0;
        let s = impact_from_lambda0(lambda0);
        let sig = sigmoid_regularizer(1.1, 1.0, lambda0, unit_sigmoid_amplitude()).unwrap();
        let bounded = bounded_lambda(1.1, s);
        assert!((sig - bounded).abs() < 0.1 * 0.1, "sigmoid {sig} bounded {bounded}");
        // Slopes at the center: central differences of both forms.
        let h = 1e-5;
        let d_sig = (sigmoid_regularizer(1.0 + h, 1.0, lambda0, unit_sigmoid_amplitude()).unwrap()
            - sigmoid_regularizer(1.0 - h, 1.0, lambda0, unit_sigmoid_amplitude()).unwrap())
            / (2.0 * h);
        let d_bounded = (bounded_lambda(1.0 + h, s) - bounded_lambda(1.0 - h, s)) / (2.0 * h);
        assert!((d_sig - d_bounded).abs() < 1e-8, "{d_sig} vs {d_bounded}");
    }

    #[test]
    fn cochran_two_sample_mean_variance() {
        let mut rng = RngStream::new(11, 0);
        let est = cochran_scaling_check(2, 1.0, 1_000_000, &mut rng).unwrap();
        assert!((est.mean_batch_variance - 0.5).abs() < 0.005, "{est:?}");
    }

    #[test]
    fn cochran_single_sample_has_no_variance() {
        let mut rng = RngStream::new(11, 1);
        let est = cochran_scaling_check(1, 3.0, 1000, &mut rng).unwrap();
        assert_eq!(est.mean_batch_variance, 0.0);
    }

    #[test]
    fn cochran_variance_of_mean() {
        let mut rng = RngStream::new(11, 2);
        let est = cochran_scaling_check(100, 4.0, 100_000, &mut rng).unwrap();
        assert!((est.variance_of_mean / 0.04 - 1.0).abs() < 0.05, "{est:?}");
        assert!((est.mean_batch_variance / est.expected_batch_variance - 1.0).abs() < 0.01);
    }

    fn random_batch(rng: &mut RngStream, m: usize, dim: usize, offset: f64) -> Vec<ParamVector> {
        (0..m).map(|_| ParamVector::new((0..dim).map(|_| offset + rng.standard_normal()).collect()).unwrap()).collect()
    }

    #[test]
    fn one_pass_matches_two_pass() {
        let mut rng = RngStream::new(77, 0);
        let mut checked = 0;
        for trial in 0..200 {
            let b = random_batch(&mut rng, 2 + trial % 30, 4, 3.0 * (trial as f64 / 200.0 - 0.5));
            let two = minibatch_stats(&b, DEFAULT_GUARD).unwrap();
            let one = scale_free_one_pass(&b).unwrap();
            for j in 0..4 {
                if two.mean_increment[j].abs() > 1e-6 && two.scale_free[j] < RHO_CAP {
                    let rel = (one[j] - two.scale_free[j]).abs() / two.scale_free[j].abs().max(1e-300);
                    // cancellation in Σδ²/(mδ̄²) − 1 grows like ρ⁻¹
                    let tol = 1e-10f64.max(1e-13 / two.scale_free[j]);
                    assert!(rel < tol, "trial {trial} coord {j}: {} vs {}", one[j], two.scale_free[j]);
                    checked += 1;
                }
            }
        }
        assert!(checked > 700);
    }

    proptest! {
        #[test]
        fn lambda_bounded_and_decreasing(rho in 0.0f64..1e6, rho_bar in 1e-6f64..1e6, s in 1e-3f64..50.0, bump in 1e-3f64..10.0) {
            let l = bounded_lambda(rho / rho_bar, s);
            prop_assert!(l > 0.0 && l <= 1.0 + s);
            let l2 = bounded_lambda((rho + bump * rho_bar) / rho_bar, s);
            prop_assert!(l2 < l);
        }

        #[test]
        fn scale_free_invariance(seed in 0u64..1000, c in prop_oneof![-100.0f64..-0.01, 0.01f64..100.0]) {
            let mut rng = RngStream::new(seed, 0);
            let b = random_batch(&mut rng, 8, 3, 1.5);
            let scaled: Vec<ParamVector> = b.iter().map(|v| v.scale(c).unwrap()).collect();
            let r1 = minibatch_stats(&b, DEFAULT_GUARD).unwrap().scale_free;
            let r2 = minibatch_stats(&scaled, DEFAULT_GUARD).unwrap().scale_free;
            for j in 0..3 {
                prop_assert!((r1[j] - r2[j]).abs() <= 1e-9 * r1[j].max(1.0));
            }
        }

        #[test]
        fn variance_is_nonnegative(seed in 0u64..1000, m in 1usize..20) {
            let mut rng = RngStream::new(seed, 1);
            let b = random_batch(&mut rng, m, 5, 0.0);
            let st = minibatch_stats(&b, DEFAULT_GUARD).unwrap();
            prop_assert!(st.variance.iter().all(|&v| v >= 0.0));
            prop_assert!(st.scale_free.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn omega_nondecreasing(rhos in proptest::collection::vec(0.0f64..100.0, 1..50)) {
            let mut state = RegularizerState::new(1, 2.0, NormalizationMode::MeanNormalized).unwrap();
            let mut prev = 0.0;
            for r in rhos {
                let lambda = state.observe(&ParamVector::new(vec![r]).unwrap()).unwrap();
                prop_assert!(state.omega()[0] >= prev);
                prop_assert!(lambda[0] > 0.0 && lambda[0] <= 3.0);
                prev = state.omega()[0];
            }
        }
    }
}
