//! Numerical audits of the convergence theory.
//!
//! Closed-form bounds and solutions live next to brute-force or Monte Carlo
//! oracles that check them. Every `audit_*` function returns a
//! [`CheckReport`]; [`full_audit`] runs the whole suite.
//!
//! Trace convention: record `t` stores the iterate `x_t` *before* step `t`,
//! the step size `γ_t`, the true gradient `g_t`, the stochastic error
//! `ε_t = δ̄_t − g_t`, `R_t = ‖x_t − x*‖²`, and the loss `f(x_{t+1})` reached
//! *after* the step. The averaged-loss criterion therefore averages the
//! post-step losses, which is the pairing under which the upper bound `S_T`
//! holds deterministically.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numerics::{ParamVector, RngStream};
use crate::optim::adam_variance_recursions;
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::problems::{
    finite_difference_check, gaussian_blobs, linear_data, Activation, IncrementStream, LinearRegression, LogisticRegression, Mlp,
    NoiseSchedule, NoiseShape, NoiseSpec, Problem, Quadratic,
};
use crate::stats::{bounded_lambda, impact_from_lambda0, sigmoid_regularizer, unit_sigmoid_amplitude};

/// Outcome of one audit.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub name: String,
    pub passed: bool,
    pub summary: String,
    pub metrics: Vec<(String, f64)>,
}

impl CheckReport {
    fn new(name: &str, passed: bool, summary: String, metrics: Vec<(&str, f64)>) -> Self {
        CheckReport { name: name.to_string(), passed, summary, metrics: metrics.into_iter().map(|(k, v)| (k.to_string(), v)).collect() }
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.metrics.iter().find(|(k, _)| k == key).map(|&(_, v)| v)
    }
}

// ---------------------------------------------------------------------------
// Traces and the averaged-loss bound

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub x: ParamVector,
    pub gamma: f64,
    pub g: ParamVector,
    pub eps: ParamVector,
    pub loss_after: f64,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryTrace {
    pub x_star: ParamVector,
    pub f_star: f64,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryTrace {
    pub fn new(x_star: ParamVector, f_star: f64) -> Self {
        TrajectoryTrace { x_star, f_star, steps: Vec::new() }
    }

    /// Appends a step, computing `R_t` from `x`.
    pub fn push(&mut self, x: ParamVector, gamma: f64, g: ParamVector, eps: ParamVector, loss_after: f64) -> Result<()> {
        let d = self.x_star.len();
        for v in [&x, &g, &eps] {
            if v.len() != d {
                return Err(Error::ShapeMismatch { left: d, right: v.len() });
            }
        }
        let r = x.iter().zip(self.x_star.iter()).fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
        self.steps.push(StepRecord { x, gamma, g, eps, loss_after, r });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn max_r(&self) -> f64 {
        self.steps.iter().map(|s| s.r).fold(0.0, f64::max)
    }

    /// `M² = 1.1 · max_t R_t`.
    pub fn region_bound(&self) -> f64 {
        1.1 * self.max_r()
    }
}

/// `(1/T) Σ [f(x_{t+1}) − f*]`.
pub fn average_loss_criterion(trace: &TrajectoryTrace) -> Result<f64> {
    average_loss_prefix(trace, trace.len())
}

fn average_loss_prefix(trace: &TrajectoryTrace, t: usize) -> Result<f64> {
    if t == 0 || t > trace.len() {
        return Err(Error::Empty("averaged loss over an empty trace prefix"));
    }
    let sum = trace.steps[..t].iter().fold(0.0, |acc, s| acc + (s.loss_after - trace.f_star));
    Ok(sum / t as f64)
}

/// The averaged-loss upper bound
///
/// ```text
/// S_T = M²/(2 γ_T T) + (1/2T) Σ γ_t (1 + L γ_t) ‖ε_t‖² − (1/T) Σ ε_t · (x_t − L γ_t² g_t − x*)
/// ```
///
/// Preconditions (checked): `γ_t ≤ 1/L`, `γ_t` nonincreasing, `R_t ≤ M²`.
pub fn upper_bound_s_t(trace: &TrajectoryTrace, lipschitz: f64, m2: f64) -> Result<f64> {
    upper_bound_prefix(trace, trace.len(), lipschitz, m2)
}

/// [`upper_bound_s_t`] over the first `t` records.
pub fn upper_bound_prefix(trace: &TrajectoryTrace, t: usize, lipschitz: f64, m2: f64) -> Result<f64> {
    if t == 0 || t > trace.len() {
        return Err(Error::Empty("upper bound over an empty trace prefix"));
    }
    let steps = &trace.steps[..t];
    let mut prev_gamma = f64::INFINITY;
    let mut quad = 0.0;
    let mut lin = 0.0;
    for (k, s) in steps.iter().enumerate() {
        if !(s.gamma > 0.0) || s.gamma * lipschitz > 1.0 + 1e-15 {
            return Err(Error::Precondition(format!("step {}: γ = {} violates 0 < γ ≤ 1/L = {}", k + 1, s.gamma, 1.0 / lipschitz)));
        }
        if s.gamma > prev_gamma {
            return Err(Error::Precondition(format!("step {}: γ increased from {prev_gamma} to {}", k + 1, s.gamma)));
        }
        if s.r > m2 {
            return Err(Error::Precondition(format!("step {}: R_t = {} exceeds M² = {m2}", k + 1, s.r)));
        }
        prev_gamma = s.gamma;
        let eps_sq = s.eps.iter().fold(0.0, |acc, e| acc + e * e);
        quad += s.gamma * (1.0 + lipschitz * s.gamma) * eps_sq;
        let lg2 = lipschitz * s.gamma * s.gamma;
        lin += s
            .eps
            .iter()
            .zip(s.x.iter())
            .zip(s.g.iter())
            .zip(trace.x_star.iter())
            .fold(0.0, |acc, (((e, x), g), xs)| acc + e * (x - lg2 * g - xs));
    }
    let tf = t as f64;
    let gamma_t = steps[t - 1].gamma;
    Ok(m2 / (2.0 * gamma_t * tf) + quad / (2.0 * tf) - lin / tf)
}

/// Runs minibatch SGD with step sizes `schedule(t)` (t from 1) on a problem
/// with injected noise and records the trace.
pub fn record_sgd_trace(
    problem: &dyn Problem,
    noise: &NoiseSpec,
    schedule: &(dyn Fn(u64) -> f64 + Sync),
    steps: usize,
    batch_size: usize,
    seed: u64,
) -> Result<TrajectoryTrace> {
    let (x_star, f_star) = problem.optimum().ok_or_else(|| Error::Precondition(format!("{} has no known optimum", problem.name())))?;
    let mut trace = TrajectoryTrace::new(x_star, f_star);
    let mut stream = IncrementStream::new(problem, Some(noise.clone()), batch_size, RngStream::new(seed, 0), RngStream::new(seed, 1))?;
    let mut x = problem.initial_point(seed);
    let dim = problem.dim();
    let mut g = vec![0.0; dim];
    for t in 1..=steps as u64 {
        problem.grad(&x, &mut g);
        let batch = stream.next_batch(&x);
        let mean = crate::numerics::mean_of(&batch.increments)?;
        let gamma = schedule(t);
        let eps: Vec<f64> = mean.iter().zip(&g).map(|(d, gv)| d - gv).collect();
        let next = x.sub(&mean.scale(gamma)?)?;
        let loss_after = problem.loss(&next);
        trace.push(x, gamma, ParamVector::new(g.clone())?, ParamVector::new(eps)?, loss_after)?;
        x = next;
    }
    Ok(trace)
}

// ---------------------------------------------------------------------------
// Expectation and variance bounds

/// `M² / (2 γ_T T) + (Σ γ_t / T) σ0²`.
pub fn expected_bound_theorem1(gammas: &[f64], m2: f64, sigma0_sq: f64) -> Result<f64> {
    let last = *gammas.last().ok_or(Error::Empty("empty step-size schedule"))?;
    if gammas.iter().any(|&g| !(g > 0.0)) {
        return Err(Error::InvalidArgument("step sizes must be positive".into()));
    }
    let t = gammas.len() as f64;
    Ok(m2 / (2.0 * last * t) + gammas.iter().sum::<f64>() / t * sigma0_sq)
}

/// The two terms of [`expected_bound_theorem1`] for `γ_t = γ0 t^{−α}`:
/// a deterministic part scaling as `T^{α−1}` and a stochastic part scaling
/// as `T^{−α}`.
pub fn theorem1_terms_power_schedule(alpha: f64, gamma0: f64, t: u64, m2: f64, sigma0_sq: f64) -> (f64, f64) {
    let tf = t as f64;
    let gamma_t = gamma0 * tf.powf(-alpha);
    let sum: f64 = (1..=t).map(|k| gamma0 * (k as f64).powf(-alpha)).sum();
    (m2 / (2.0 * gamma_t * tf), sum / tf * sigma0_sq)
}

/// `(1/T) [4 M² σ̄² + η̄⁴ / L²]`.
pub fn variance_bound_theorem2(t: usize, m2: f64, sigma_bar2: f64, eta_bar4: f64, lipschitz: f64) -> f64 {
    (4.0 * m2 * sigma_bar2 + eta_bar4 / (lipschitz * lipschitz)) / t as f64
}

/// One-step variance of the Lyapunov criterion:
/// `γ⁴(η⁴ − σ⁴) + 4γ²σ²d² − 4γ³ι³d`.
pub fn lyapunov_variance_step(gamma: f64, sigma2: f64, iota3: f64, eta4: f64, d: f64) -> f64 {
    let g2 = gamma * gamma;
    g2 * g2 * (eta4 - sigma2 * sigma2) + 4.0 * g2 * sigma2 * d * d - 4.0 * g2 * gamma * iota3 * d
}

/// Sample variance of `R_{t+1} = (d − γ ε)²` over `draws` one-step draws
/// of `ε` with the given shape and variance.
pub fn lyapunov_variance_monte_carlo(gamma: f64, sigma2: f64, d: f64, shape: NoiseShape, draws: usize, rng: &mut RngStream) -> f64 {
    let sd = sigma2.sqrt();
    let samples: Vec<f64> = (0..draws)
        .map(|_| {
            let v = d - gamma * sd * shape.draw(rng);
            v * v
        })
        .collect();
    let n = draws as f64;
    let mean = samples.iter().sum::<f64>() / n;
    samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
}

/// `max{R_1, G²/l²} / t`.
pub fn theorem_s0_bound(l: f64, g2: f64, r1: f64, t: u64) -> f64 {
    r1.max(g2 / (l * l)) / t as f64
}

/// Least-squares slope of `log y` against `log x`, negated: a sequence
/// decaying like `x^{−p}` yields `p`.
pub fn decay_exponent(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::ShapeMismatch { left: xs.len(), right: ys.len() });
    }
    if xs.len() < 2 {
        return Err(Error::Empty("need at least two points for a fit"));
    }
    if xs.iter().chain(ys).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("log-log fit needs positive values".into()));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    Ok(-sxy / sxx)
}

/// Settings for [`strong_convexity_rate_check`]: a one-dimensional
/// quadratic `f = (l/2) x²` started at `x_1 = sqrt(R_1)` with Gaussian
/// mean-gradient noise of variance `σ²` and steps `γ_t = 1/(t l)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StrongConvexitySetup {
    pub l: f64,
    pub g2: f64,
    pub r1: f64,
    pub sigma2: f64,
    pub steps: usize,
    pub seeds: usize,
    pub base_seed: u64,
}

/// Monte Carlo check of `E[R_t] ≤ max{R_1, G²/l²}/t` at every `t`, plus the
/// decay of the one-step Lyapunov variance relative to `γ_t²`.
pub fn strong_convexity_rate_check(setup: &StrongConvexitySetup) -> Result<CheckReport> {
    let StrongConvexitySetup { l, g2, r1, sigma2, steps, seeds, base_seed } = *setup;
    if !(l > 0.0 && r1 >= 0.0 && sigma2 >= 0.0 && steps >= 2 && seeds >= 2) {
        return Err(Error::InvalidArgument(format!("bad strong-convexity setup {setup:?}")));
    }
    let sd = sigma2.sqrt();
    // per seed: R_t for t = 1..=steps, the conditional one-step variance
    // Var(R_{t+1} | x_t), and |ḡ_t|²
    let runs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..seeds)
        .into_par_iter()
        .map(|k| {
            let mut rng = RngStream::new(base_seed, k as u64);
            let mut x = r1.sqrt();
            let mut rs = Vec::with_capacity(steps);
            let mut cond = Vec::with_capacity(steps);
            let mut gbar = Vec::with_capacity(steps);
            for t in 1..=steps {
                let gamma = 1.0 / (t as f64 * l);
                rs.push(x * x);
                let g = l * x;
                let d = x - gamma * g;
                cond.push(lyapunov_variance_step(gamma, sigma2, 0.0, 3.0 * sigma2 * sigma2, d));
                let noisy = g + sd * rng.standard_normal();
                gbar.push(noisy * noisy);
                x -= gamma * noisy;
            }
            (rs, cond, gbar)
        })
        .collect();
    let n = seeds as f64;
    let mut worst_margin = f64::NEG_INFINITY;
    let mut worst_t = 0;
    let mut mean_r = vec![0.0; steps];
    let mut var_r = vec![0.0; steps];
    let mut mean_cond = vec![0.0; steps];
    let mut max_g2 = 0.0f64;
    for t in 0..steps {
        let m = runs.iter().map(|r| r.0[t]).sum::<f64>() / n;
        let v = runs.iter().map(|r| (r.0[t] - m).powi(2)).sum::<f64>() / (n - 1.0);
        mean_r[t] = m;
        var_r[t] = v;
        mean_cond[t] = runs.iter().map(|r| r.1[t]).sum::<f64>() / n;
        let mg = runs.iter().map(|r| r.2[t]).sum::<f64>() / n;
        let se_g = (runs.iter().map(|r| (r.2[t] - mg).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
        max_g2 = max_g2.max(mg - 3.0 * se_g);
        let bound = theorem_s0_bound(l, g2, r1, t as u64 + 1);
        let margin = m - 3.0 * (v / n).sqrt() - bound;
        if margin > worst_margin {
            worst_margin = margin;
            worst_t = t + 1;
        }
    }
    let lo = (steps / 10).max(2);
    let ts: Vec<f64> = (lo..=steps).map(|t| t as f64).collect();
    let cond_exp = decay_exponent(&ts[..ts.len() - 1], &mean_cond[lo - 1..steps - 1])?;
    let uncond_exp = decay_exponent(&ts, &var_r[lo - 1..])?;
    let gamma_exp = 2.0;
    let rate_ok = worst_margin <= 0.0;
    let exp_ok = cond_exp > gamma_exp;
    let hyp_ok = max_g2 <= g2;
    Ok(CheckReport::new(
        "strong_convexity",
        rate_ok && exp_ok && hyp_ok,
        format!(
            "E[R_t] - 3se - bound <= 0 for t <= {steps} (worst {worst_margin:.3e} at t={worst_t}); \
             one-step Var(R) decay exponent {cond_exp:.3} vs gamma^2 exponent {gamma_exp}; \
             unconditional Var(R_t) exponent {uncond_exp:.3}; G^2 hypothesis {}",
            if hyp_ok { "holds" } else { "violated" }
        ),
        vec![
            ("worst_margin", worst_margin),
            ("conditional_variance_exponent", cond_exp),
            ("unconditional_variance_exponent", uncond_exp),
            ("seeds", n),
        ],
    ))
}

// ---------------------------------------------------------------------------
// Optimal regularizers

/// `Q_T = Σ λ_t (1 + λ_t/λ0) σ_t²`.
pub fn qt_objective(lambdas: &[f64], sigma2: &[f64], lambda0: f64) -> Result<f64> {
    if lambdas.len() != sigma2.len() {
        return Err(Error::ShapeMismatch { left: lambdas.len(), right: sigma2.len() });
    }
    if let Some(index) = lambdas.iter().position(|&l| !(l >= 0.0)) {
        return Err(Error::InvalidArgument(format!("λ[{index}] = {} is negative", lambdas[index])));
    }
    Ok(lambdas.iter().zip(sigma2).fold(0.0, |acc, (&l, &s)| acc + l * (1.0 + l / lambda0) * s))
}

/// Inverse-averaged variance `(mean 1/σ_t²)^{-1}`.
pub fn inverse_averaged_variance(sigma2: &[f64]) -> Result<f64> {
    if sigma2.is_empty() {
        return Err(Error::Empty("empty variance sequence"));
    }
    if let Some(index) = sigma2.iter().position(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!("σ²[{index}] = {} must be positive", sigma2[index])));
    }
    Ok(sigma2.len() as f64 / sigma2.iter().map(|s| 1.0 / s).sum::<f64>())
}

/// Minimizer of `Q_T` subject to `Σ λ_t = T`:
/// `λ_t = (1 + λ0/2) σ̃² / σ_t² − λ0/2`.
pub fn optimal_lambdas_closed_form(sigma2: &[f64], lambda0: f64) -> Result<Vec<f64>> {
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!("λ0 must be positive, got {lambda0}")));
    }
    let tilde = inverse_averaged_variance(sigma2)?;
    let half = lambda0 / 2.0;
    Ok(sigma2.iter().map(|s| (1.0 + half) * tilde / s - half).collect())
}

/// Numerical minimizer of `Q_T` on the hyperplane `Σ λ_t = T` by projected
/// gradient descent from `λ ≡ 1`. Unconstrained in sign, like the closed form.
pub fn constrained_qt_minimizer(sigma2: &[f64], lambda0: f64, iterations: usize) -> Result<Vec<f64>> {
    inverse_averaged_variance(sigma2)?;
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!("λ0 must be positive, got {lambda0}")));
    }
    let max_s = sigma2.iter().copied().fold(0.0, f64::max);
    // Hessian is diag(2σ²/λ0); this step is 1/(largest curvature).
    let step = lambda0 / (2.0 * max_s);
    let n = sigma2.len() as f64;
    let mut lambda = vec![1.0; sigma2.len()];
    for _ in 0..iterations {
        let grad: Vec<f64> = lambda.iter().zip(sigma2).map(|(&l, &s)| (1.0 + 2.0 * l / lambda0) * s).collect();
        let mean = grad.iter().sum::<f64>() / n;
        lambda.iter_mut().zip(&grad).for_each(|(l, g)| *l -= step * (g - mean));
    }
    Ok(lambda)
}

/// Deviations of the bounded regularizer from the optimal-regularizer family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyReport {
    /// Impact factor `(1 + λ0/2)/(e − λ0/2)` used for the bounded form.
    pub impact: f64,
    /// Max relative gap between the bounded form and the sigmoid-squashed
    /// optimum (`a = 1 + 1/e`). Second order in the spread.
    pub max_deviation: f64,
    /// Max relative gap between the bounded form and the unsquashed
    /// closed form. First order in the spread.
    pub max_deviation_closed_form: f64,
}

/// Compares `(1 + s)/(1 + s σ_t²/σ̄²)` (with `σ̄²` the arithmetic mean and `s`
/// matched to `λ0`) against the sigmoid-bounded optimum and the closed form.
pub fn bounded_regularizer_consistency(sigma2: &[f64], lambda0: f64) -> Result<ConsistencyReport> {
    if sigma2.is_empty() {
        return Err(Error::Empty("empty variance sequence"));
    }
    let closed = optimal_lambdas_closed_form(sigma2, lambda0)?;
    let bar = sigma2.iter().sum::<f64>() / sigma2.len() as f64;
    let s = impact_from_lambda0(lambda0);
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(format!("λ0 = {lambda0} gives a non-positive impact factor")));
    }
    let a = unit_sigmoid_amplitude();
    let mut max_dev = 0.0f64;
    let mut max_closed = 0.0f64;
    for (&s2, &c) in sigma2.iter().zip(&closed) {
        let bounded = bounded_lambda(s2 / bar, s);
        let sig = sigmoid_regularizer(s2, bar, lambda0, a)?;
        max_dev = max_dev.max((bounded - sig).abs() / sig.abs());
        max_closed = max_closed.max((bounded - c).abs() / c.abs());
    }
    Ok(ConsistencyReport { impact: s, max_deviation: max_dev, max_deviation_closed_form: max_closed })
}

// ---------------------------------------------------------------------------
// Audits

/// Random `(ρ, ρ̄, s)` triples: bounds, the unit identity and monotonicity.
pub fn audit_regularizer(samples: usize, seed: u64) -> CheckReport {
    let mut rng = RngStream::new(seed, 0);
    let mut failures = 0usize;
    for _ in 0..samples {
        let s = 0.01 + 20.0 * rng.uniform01();
        let rho_bar = (10.0f64).powf(6.0 * rng.uniform01() - 3.0);
        let rho = rho_bar * (10.0f64).powf(8.0 * rng.uniform01() - 4.0);
        let l = bounded_lambda(rho / rho_bar, s);
        let bigger = bounded_lambda((rho * (1.0 + 1e-3 + rng.uniform01())) / rho_bar, s);
        let rho_equal = rho_bar;
        let unit = bounded_lambda(rho_equal / rho_bar, s);
        if !(l > 0.0 && l <= 1.0 + s) || unit != 1.0 || !(bigger < l) {
            failures += 1;
        }
    }
    CheckReport::new(
        "regularizer",
        failures == 0,
        format!("{samples} random (rho, rho_bar, s) triples, {failures} violations"),
        vec![("samples", samples as f64), ("violations", failures as f64)],
    )
}

/// Closed-form optimal regularizer against the projected-gradient oracle.
pub fn audit_theorem3(instances: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = RngStream::new(seed, 0);
    let mut max_err = 0.0f64;
    let mut max_sum_err = 0.0f64;
    let mut worse_perturbations = 0usize;
    let mut box_feasible = 0usize;
    for _ in 0..instances {
        let t = 3 + rng.index_uniform(18);
        let lambda0 = 1.0 + 4.0 * rng.uniform01();
        let spread = 0.1 * rng.uniform01();
        let base = 0.1 + 10.0 * rng.uniform01();
        let sigma2: Vec<f64> = (0..t).map(|_| base * (1.0 + spread * (2.0 * rng.uniform01() - 1.0))).collect();
        let closed = optimal_lambdas_closed_form(&sigma2, lambda0)?;
        let oracle = constrained_qt_minimizer(&sigma2, lambda0, 10_000)?;
        for (c, o) in closed.iter().zip(&oracle) {
            max_err = max_err.max((c - o).abs());
        }
        max_sum_err = max_sum_err.max((closed.iter().sum::<f64>() - t as f64).abs());
        let q_best = qt_objective(&closed, &sigma2, lambda0)?;
        for _ in 0..1000 {
            // random direction in the constraint hyperplane
            let mut dir: Vec<f64> = (0..t).map(|_| rng.standard_normal()).collect();
            let mean = dir.iter().sum::<f64>() / t as f64;
            dir.iter_mut().for_each(|d| *d -= mean);
            let scale = 0.2 * rng.uniform01();
            let cand: Vec<f64> = closed.iter().zip(&dir).map(|(c, d)| c + scale * d).collect();
            if cand.iter().all(|&v| v >= 0.0) && qt_objective(&cand, &sigma2, lambda0)? < q_best {
                worse_perturbations += 1;
            }
        }
        if closed.iter().all(|&l| l > 0.0 && l <= lambda0) {
            box_feasible += 1;
        }
    }
    let passed = max_err <= 1e-6 && max_sum_err <= 1e-10 && worse_perturbations == 0;
    Ok(CheckReport::new(
        "theorem3",
        passed,
        format!(
            "{instances} instances: max |closed - oracle| = {max_err:.2e}, max |sum - T| = {max_sum_err:.2e}, \
             {worse_perturbations} feasible perturbations beat the closed form, {box_feasible}/{instances} inside (0, lambda0]"
        ),
        vec![
            ("max_oracle_error", max_err),
            ("max_sum_error", max_sum_err),
            ("better_perturbations", worse_perturbations as f64),
            ("box_feasible", box_feasible as f64),
        ],
    ))
}

fn noisy_quadratic(dim: usize, start: f64) -> Result<Quadratic> {
    Quadratic::new(1.0, dim)?.with_start(ParamVector::filled(dim, start))
}

/// Averaged post-step loss never exceeds `S_T` at any prefix of any run.
pub fn audit_lemma1(seeds: usize, steps: usize, base_seed: u64) -> Result<CheckReport> {
    let problem = noisy_quadratic(3, 2.0)?;
    let lipschitz = problem.lipschitz().expect("quadratic");
    let slacks: Vec<Result<f64>> = (0..seeds)
        .into_par_iter()
        .map(|k| {
            let shape = if k % 3 == 2 { NoiseShape::Laplace } else { NoiseShape::Gaussian };
            let noise = NoiseSpec { shape, ..NoiseSpec::gaussian(NoiseSchedule::Constant { variance: 1.0 }) };
            let constant = |_t: u64| 0.5;
            let decaying = |t: u64| 0.9 / (t as f64).sqrt();
            let schedule: &(dyn Fn(u64) -> f64 + Sync) = if k % 2 == 0 { &constant } else { &decaying };
            let trace = record_sgd_trace(&problem, &noise, schedule, steps, 4, base_seed.wrapping_add(k as u64))?;
            let m2 = trace.region_bound();
            let mut worst = f64::INFINITY;
            for t in 1..=trace.len() {
                let s = upper_bound_prefix(&trace, t, lipschitz, m2)?;
                let a = average_loss_prefix(&trace, t)?;
                worst = worst.min(s - a);
            }
            Ok(worst)
        })
        .collect();
    let slacks: Vec<f64> = slacks.into_iter().collect::<Result<_>>()?;
    let min_slack = slacks.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(CheckReport::new(
        "lemma1",
        min_slack >= -1e-10,
        format!("{seeds} runs x {steps} checkpoints: min (S_T - averaged loss) = {min_slack:.3e}"),
        vec![("min_slack", min_slack), ("seeds", seeds as f64)],
    ))
}

fn mean_and_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0))
}

/// Runs the 1-D noisy quadratic used by the expectation and variance
/// audits and returns `S_T` per seed, the shared `M²`, and the schedule.
fn s_t_samples(seeds: usize, steps: usize, sigma2: f64, base_seed: u64) -> Result<(Vec<f64>, f64, Vec<f64>)> {
    let problem = noisy_quadratic(1, 3.0)?;
    let lipschitz = problem.lipschitz().expect("quadratic");
    let schedule = |t: u64| 0.5 / (t as f64).sqrt();
    // per-sample variance 4·σ² with m = 4 gives mean-gradient variance σ²
    let noise = NoiseSpec::gaussian(NoiseSchedule::Constant { variance: 4.0 * sigma2 });
    let traces: Vec<Result<TrajectoryTrace>> = (0..seeds)
        .into_par_iter()
        .map(|k| record_sgd_trace(&problem, &noise, &schedule, steps, 4, base_seed.wrapping_add(k as u64)))
        .collect();
    let traces: Vec<TrajectoryTrace> = traces.into_iter().collect::<Result<_>>()?;
    let m2 = 1.1 * traces.iter().map(|t| t.max_r()).fold(0.0, f64::max);
    let s: Vec<f64> = traces.iter().map(|t| upper_bound_s_t(t, lipschitz, m2)).collect::<Result<_>>()?;
    let gammas = (1..=steps as u64).map(schedule).collect();
    Ok((s, m2, gammas))
}

/// Monte Carlo mean of `S_T` against its expectation bound.
pub fn audit_theorem1(seeds: usize, steps: usize, base_seed: u64) -> Result<CheckReport> {
    let sigma2 = 1.0;
    let (s, m2, gammas) = s_t_samples(seeds, steps, sigma2, base_seed)?;
    let (mean, var) = mean_and_var(&s);
    let se = (var / seeds as f64).sqrt();
    let bound = expected_bound_theorem1(&gammas, m2, sigma2)?;
    Ok(CheckReport::new(
        "theorem1",
        mean - 3.0 * se <= bound,
        format!("mean S_T = {mean:.5} (se {se:.2e}) vs bound {bound:.5} over {seeds} seeds, T = {steps}"),
        vec![("mean", mean), ("se", se), ("bound", bound), ("seeds", seeds as f64)],
    ))
}

/// Monte Carlo variance of `S_T` against its bound (Gaussian noise).
pub fn audit_theorem2(seeds: usize, steps: usize, base_seed: u64) -> Result<CheckReport> {
    let sigma2 = 1.0;
    let (s, m2, _) = s_t_samples(seeds, steps, sigma2, base_seed)?;
    let (mean, var) = mean_and_var(&s);
    let n = seeds as f64;
    let m4 = s.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let se = ((m4 - var * var).max(0.0) / n).sqrt();
    let bound = variance_bound_theorem2(steps, m2, sigma2, 3.0 * sigma2 * sigma2, 1.0);
    Ok(CheckReport::new(
        "theorem2",
        var - 3.0 * se <= bound,
        format!("Var S_T = {var:.4e} (se {se:.2e}) vs bound {bound:.4e} over {seeds} seeds, T = {steps}"),
        vec![("variance", var), ("se", se), ("bound", bound), ("seeds", n)],
    ))
}

/// One-step Lyapunov variance (closed form vs Monte Carlo) and the
/// strong-convexity rate check.
pub fn audit_lyapunov(draws: usize, seeds: usize, steps: usize, base_seed: u64) -> Result<CheckReport> {
    let (gamma, sigma2, d) = (0.1, 1.0, 2.0);
    let mut rng = RngStream::new(base_seed, 0);
    let mut worst_rel = 0.0f64;
    let mut details = Vec::new();
    for shape in [NoiseShape::Gaussian, NoiseShape::CenteredExponential] {
        let (iota3, eta4) = shape.moments(sigma2);
        let closed = lyapunov_variance_step(gamma, sigma2, iota3, eta4, d);
        let mc = lyapunov_variance_monte_carlo(gamma, sigma2, d, shape, draws, &mut rng);
        let rel = (mc - closed).abs() / closed;
        if shape == NoiseShape::Gaussian {
            worst_rel = rel;
        }
        details.push(format!("{shape:?}: closed {closed:.6} mc {mc:.6}"));
    }
    let rate = strong_convexity_rate_check(&StrongConvexitySetup {
        l: 1.0,
        g2: 5.0,
        r1: 4.0,
        sigma2: 1.0,
        steps,
        seeds,
        base_seed: base_seed.wrapping_add(1),
    })?;
    let passed = worst_rel < 0.01 && rate.passed;
    Ok(CheckReport::new(
        "lyapunov",
        passed,
        format!("one-step variance rel. error {worst_rel:.2e} ({}); {}", details.join(", "), rate.summary),
        [vec![("one_step_rel_error", worst_rel)], rate.metrics.iter().map(|(k, v)| (k.as_str(), *v)).collect()].concat(),
    ))
}

/// Frozen-point Monte Carlo of VR-Adam's increment variance: returns the
/// empirical variance of the final increment over `replicas` and the mean
/// of the estimates the optimizer reports.
pub fn vr_adam_variance_monte_carlo(
    g: f64,
    noise_to_signal: f64,
    batch: usize,
    steps: usize,
    replicas: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let sd_sample = noise_to_signal * g.abs() * (batch as f64).sqrt();
    let outcomes: Vec<Result<(f64, f64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(seed, r as u64);
            let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::VrAdam, 1e-12), ParamVector::zeros(1))?;
            let mut last = None;
            for _ in 0..steps {
                let b: Vec<ParamVector> =
                    (0..batch).map(|_| ParamVector::new(vec![g + sd_sample * rng.standard_normal()])).collect::<Result<_>>()?;
                last = Some(opt.step(&b)?);
            }
            let rep = last.ok_or(Error::Empty("zero steps"))?;
            let est = rep.increment_variance.ok_or(Error::Precondition("no variance estimate".into()))?;
            Ok((rep.increment[0], est[0]))
        })
        .collect();
    let outcomes: Vec<(f64, f64)> = outcomes.into_iter().collect::<Result<_>>()?;
    let finals: Vec<f64> = outcomes.iter().map(|o| o.0).collect();
    let (_, var) = mean_and_var(&finals);
    let est = outcomes.iter().map(|o| o.1).sum::<f64>() / replicas as f64;
    Ok((var, est))
}

/// Momentum-variance recursions against geometric sums, and the increment
/// variance estimate against frozen-point Monte Carlo.
pub fn audit_vr_adam(replicas: usize, base_seed: u64) -> Result<CheckReport> {
    let mut rng = RngStream::new(base_seed, 0);
    let mut max_rel = 0.0f64;
    for _ in 0..100 {
        let (b1, b2) = (0.99 * rng.uniform01(), 0.999 * rng.uniform01());
        let sig: Vec<f64> = (0..20).map(|_| 5.0 * rng.uniform01()).collect();
        let (mut u, mut v, mut w) = (ParamVector::zeros(1), ParamVector::zeros(1), ParamVector::zeros(1));
        for &s in &sig {
            let r = adam_variance_recursions(&u, &v, &w, &ParamVector::new(vec![s])?, b1, b2)?;
            (u, v, w) = (r.u, r.v, r.w);
        }
        for (acc, decay) in [(u[0], b1 * b1), (v[0], b2 * b2), (w[0], b1 * b2)] {
            let n = sig.len();
            let want = (1.0 - decay) * sig.iter().enumerate().map(|(i, s)| decay.powi((n - 1 - i) as i32) * s).sum::<f64>();
            max_rel = max_rel.max((acc - want).abs() / want.abs().max(f64::MIN_POSITIVE));
        }
    }
    let mut worst_mc = 0.0f64;
    let mut parts = Vec::new();
    for (k, g) in [2.0, -2.0].into_iter().enumerate() {
        let (mc, est) = vr_adam_variance_monte_carlo(g, 0.1, 16, 100, replicas, base_seed.wrapping_add(1 + k as u64))?;
        let rel = (est - mc).abs() / mc;
        worst_mc = worst_mc.max(rel);
        parts.push(format!("g={g}: est {est:.3e} mc {mc:.3e}"));
    }
    Ok(CheckReport::new(
        "vr_adam",
        max_rel <= 1e-12 && worst_mc < 0.2,
        format!("recursions max rel. error {max_rel:.2e}; variance estimate worst rel. error {worst_mc:.3} ({})", parts.join(", ")),
        vec![("recursion_rel_error", max_rel), ("monte_carlo_rel_error", worst_mc)],
    ))
}

/// Finite-difference validation of every model's per-sample gradients.
pub fn audit_gradients(points: usize, seed: u64) -> Result<CheckReport> {
    let mut rng = RngStream::new(seed, 0);
    let quad = Quadratic::new(1.3, 5)?;
    let lin = LinearRegression::new(linear_data(40, 5, 0.5, &mut rng)?, 0.1)?;
    let log = LogisticRegression::new(gaussian_blobs(40, 5, 1.5, &mut rng)?)?;
    let mlp = Mlp::new(&[5, 7, 4, 2], Activation::Tanh, gaussian_blobs(40, 5, 1.5, &mut rng)?, seed)?;
    let mut worst = Vec::new();
    let mut passed = true;
    for (p, tol) in [(&quad as &dyn Problem, 1e-5), (&lin, 1e-5), (&log, 1e-5), (&mlp, 1e-4)] {
        let mut max_err = 0.0f64;
        for k in 0..points {
            let x: Vec<f64> = (0..p.dim()).map(|_| rng.standard_normal()).collect();
            let i = k % p.num_samples().unwrap_or(1);
            max_err = max_err.max(finite_difference_check(p, &x, i, 1e-6).relative_error);
        }
        passed &= max_err < tol;
        worst.push((p.name().to_string(), max_err));
    }
    let summary = worst.iter().map(|(n, e)| format!("{n} {e:.2e}")).collect::<Vec<_>>().join(", ");
    Ok(CheckReport {
        name: "gradients".into(),
        passed,
        summary: format!("max relative error over {points} points: {summary}"),
        metrics: worst,
    })
}

/// Bounded regularizer against the sigmoid-squashed optimum: zero at zero
/// spread, below 1e-3 at 1% spread (`λ0 = 2`), and growing quadratically.
///
/// The second-order coefficient of the gap is proportional to `1 − k/2`
/// with `k = 1 + λ0/2`, so it vanishes at `λ0 = 2` where the gap is cubic.
/// The growth check therefore runs at `λ0 = 1`.
pub fn audit_bounded_consistency() -> Result<CheckReport> {
    let profile = |spread: f64| -> Vec<f64> { (0..21).map(|t| 1.0 + spread * (t as f64 / 10.0 - 1.0)).collect() };
    let zero = bounded_regularizer_consistency(&profile(0.0), 2.0)?;
    let small = bounded_regularizer_consistency(&profile(0.01), 2.0)?;
    let large = bounded_regularizer_consistency(&profile(0.1), 2.0)?;
    let ratio_at_two = large.max_deviation / small.max_deviation;
    let ratio = bounded_regularizer_consistency(&profile(0.1), 1.0)?.max_deviation
        / bounded_regularizer_consistency(&profile(0.01), 1.0)?.max_deviation;
    let passed = zero.max_deviation < 1e-15 && small.max_deviation < 1e-3 && (50.0..=200.0).contains(&ratio);
    Ok(CheckReport::new(
        "bounded_consistency",
        passed,
        format!(
            "deviation vs sigmoid optimum at lambda0=2: {:.2e} (0%), {:.2e} (1%), {:.2e} (10%); \
             10%/1% ratio {ratio:.1} at lambda0=1, {ratio_at_two:.0} at lambda0=2; \
             vs unsquashed closed form: {:.2e} (1%)",
            zero.max_deviation, small.max_deviation, large.max_deviation, small.max_deviation_closed_form
        ),
        vec![
            ("deviation_1pct", small.max_deviation),
            ("deviation_10pct", large.max_deviation),
            ("ratio", ratio),
            ("ratio_lambda0_2", ratio_at_two),
            ("closed_form_deviation_1pct", small.max_deviation_closed_form),
        ],
    ))
}

/// Asymptotic split of the expectation bound under `γ_t = γ0 t^{−α}`:
/// fitted exponents of both terms over `T ∈ {10², …, 10⁵}`.
pub fn audit_theorem1_asymptotics(alpha: f64) -> Result<CheckReport> {
    let ts: Vec<u64> = vec![100, 300, 1_000, 3_000, 10_000, 30_000, 100_000];
    let (det, sto): (Vec<f64>, Vec<f64>) = ts.iter().map(|&t| theorem1_terms_power_schedule(alpha, 0.5, t, 1.0, 1.0)).unzip();
    let xs: Vec<f64> = ts.iter().map(|&t| t as f64).collect();
    let det_exp = decay_exponent(&xs, &det)?;
    let sto_exp = decay_exponent(&xs, &sto)?;
    let passed = (det_exp - (1.0 - alpha)).abs() < 1e-9 && (sto_exp - alpha).abs() < 0.05;
    Ok(CheckReport::new(
        "theorem1_asymptotics",
        passed,
        format!("alpha = {alpha}: deterministic term decays as T^-{det_exp:.4}, stochastic term as T^-{sto_exp:.4}"),
        vec![("deterministic_exponent", det_exp), ("stochastic_exponent", sto_exp)],
    ))
}

/// Sizes for [`full_audit`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditSizes {
    pub lemma1_seeds: usize,
    pub theorem1_seeds: usize,
    pub theorem2_seeds: usize,
    pub lyapunov_draws: usize,
    pub lyapunov_seeds: usize,
    pub vr_adam_replicas: usize,
    pub gradient_points: usize,
}

impl Default for AuditSizes {
    fn default() -> Self {
        AuditSizes {
            lemma1_seeds: 100,
            theorem1_seeds: 200,
            theorem2_seeds: 500,
            lyapunov_draws: 1_000_000,
            lyapunov_seeds: 500,
            vr_adam_replicas: 20_000,
            gradient_points: 100,
        }
    }
}

/// Names accepted by [`run_suite`].
pub const SUITES: &[&str] = &[
    "regularizer",
    "theorem3",
    "lemma1",
    "theorem1",
    "theorem1_asymptotics",
    "theorem2",
    "lyapunov",
    "vr_adam",
    "gradients",
    "bounded_consistency",
];

/// Runs one named audit.
pub fn run_suite(name: &str, sizes: &AuditSizes, seed: u64) -> Result<CheckReport> {
    match name {
        "regularizer" => Ok(audit_regularizer(10_000, seed)),
        "theorem3" => audit_theorem3(50, seed),
        "lemma1" => audit_lemma1(sizes.lemma1_seeds, 200, seed),
        "theorem1" => audit_theorem1(sizes.theorem1_seeds, 100, seed),
        "theorem1_asymptotics" => audit_theorem1_asymptotics(0.5),
        "theorem2" => audit_theorem2(sizes.theorem2_seeds, 100, seed),
        "lyapunov" => audit_lyapunov(sizes.lyapunov_draws, sizes.lyapunov_seeds, 1000, seed),
        "vr_adam" => audit_vr_adam(sizes.vr_adam_replicas, seed),
        "gradients" => audit_gradients(sizes.gradient_points, seed),
        "bounded_consistency" => audit_bounded_consistency(),
        other => Err(Error::InvalidArgument(format!("unknown suite '{other}', expected one of {}", SUITES.join(", ")))),
    }
}

/// Every audit in [`SUITES`] order.
pub fn full_audit(sizes: &AuditSizes, seed: u64) -> Result<Vec<CheckReport>> {
    SUITES.iter().map(|s| run_suite(s, sizes, seed)).collect()
}
