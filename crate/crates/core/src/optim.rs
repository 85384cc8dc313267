//! Step engines for SGD, heavy-ball momentum, Adam and their
//! variance-regularized counterparts.
//!
//! Every optimizer consumes the per-sample increments of one mini-batch.
//! Plain kinds only look at the batch mean; the variance-regularized kinds
//! also use the spread of the batch to scale each coordinate's step by a
//! multiplier `λ ∈ (0, 1 + s]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mean_of, ParamVector};
use crate::stats::{
    minibatch_stats, minibatch_stats_global, Granularity, NormalizationMode, RegularizerState, DEFAULT_GUARD, DEFAULT_IMPACT, RHO_CAP,
};

/// Iterates whose magnitude exceeds this are treated as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Sgd,
    VrSgd,
    Momentum,
    Adam,
    VrAdam,
}

impl OptimizerKind {
    pub fn is_variance_regularized(self) -> bool {
        matches!(self, OptimizerKind::VrSgd | OptimizerKind::VrAdam)
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::VrSgd => "vr_sgd",
            OptimizerKind::Momentum => "momentum",
            OptimizerKind::Adam => "adam",
            OptimizerKind::VrAdam => "vr_adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Base learning rate `α`.
    pub lr: f64,
    /// Impact factor `s` of the regularizer.
    pub impact: f64,
    /// The impact factor used at step `t` is `s / (1 + impact_decay · (t − 1))`.
    pub impact_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub bias_correction: bool,
    pub vr_mode: NormalizationMode,
    pub granularity: Granularity,
    /// Floor on `|δ̄|` when forming the scale-free variance.
    pub guard: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Sgd,
            lr: 0.01,
            impact: DEFAULT_IMPACT,
            impact_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            bias_correction: true,
            vr_mode: NormalizationMode::MeanNormalized,
            granularity: Granularity::PerParameter,
            guard: DEFAULT_GUARD,
        }
    }
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerConfig { kind, lr, ..Default::default() }
    }

    /// Checks every field; the error names the offending one.
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::InvalidArgument(format!("{field}: {msg}")));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr", format!("must be finite and > 0, got {}", self.lr));
        }
        if !(self.impact.is_finite() && self.impact >= 0.0) {
            return bad("impact", format!("must be finite and >= 0, got {}", self.impact));
        }
        if !(self.impact_decay.is_finite() && self.impact_decay >= 0.0) {
            return bad("impact_decay", format!("must be finite and >= 0, got {}", self.impact_decay));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(field, format!("must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps.is_finite() && self.adam_eps > 0.0) {
            return bad("adam_eps", format!("must be finite and > 0, got {}", self.adam_eps));
        }
        if !(self.guard.is_finite() && self.guard > 0.0) {
            return bad("guard", format!("must be finite and > 0, got {}", self.guard));
        }
        Ok(())
    }
}

/// Persistent arrays of one optimizer instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub x: ParamVector,
    pub t: u64,
    /// First moment (momentum and Adam kinds).
    pub m1: Option<ParamVector>,
    /// Second moment (Adam kinds).
    pub m2: Option<ParamVector>,
    pub reg: Option<RegularizerState>,
    /// Momentum-variance accumulators of VR-Adam.
    pub u: Option<ParamVector>,
    pub v: Option<ParamVector>,
    pub w: Option<ParamVector>,
}

/// What one step did.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// The direction that was scaled by `α λ` and subtracted from `x`.
    pub increment: ParamVector,
    /// Per-coordinate multipliers; all ones for plain kinds.
    pub lambda: ParamVector,
    /// Scale-free variance fed to the regularizer (VR kinds).
    pub rho: Option<ParamVector>,
    /// VR-Adam's estimate of the variance of the increment.
    pub increment_variance: Option<ParamVector>,
}

/// Output of [`adam_variance_recursions`].
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumVariances {
    pub u: ParamVector,
    pub v: ParamVector,
    pub w: ParamVector,
    /// Variance of the first-moment accumulator.
    pub sigma1_sq: ParamVector,
    /// Variance term of the second-moment accumulator.
    pub sigma2_sq: ParamVector,
    /// Covariance of the two accumulators' noise.
    pub cross: ParamVector,
}

/// One step of the three momentum-variance recursions
///
/// ```text
/// u' = β1² u + (1 − β1²) σ²      σ²₁ = (1 − β1)² / (1 − β1²) · u'
/// v' = β2² v + (1 − β2²) σ²      σ²₂ = (1 − β2)² / (1 − β2²) · v'
/// w' = β1β2 w + (1 − β1β2) σ²    ⟨ε₁ε₂⟩ = (1 − β1)(1 − β2) / (1 − β1β2) · w'
/// ```
pub fn adam_variance_recursions(
    u: &ParamVector,
    v: &ParamVector,
    w: &ParamVector,
    sigma_sq: &ParamVector,
    beta1: f64,
    beta2: f64,
) -> Result<MomentumVariances> {
    let b12 = beta1 * beta2;
    if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || b12 >= 1.0 {
        return Err(Error::InvalidArgument(format!("decay rates must lie in [0, 1), got β1={beta1}, β2={beta2}")));
    }
    for other in [v, w, sigma_sq] {
        if other.len() != u.len() {
            return Err(Error::ShapeMismatch { left: u.len(), right: other.len() });
        }
    }
    if let Some(index) = sigma_sq.iter().position(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(Error::NonFinite { index });
    }
    let (b1s, b2s) = (beta1 * beta1, beta2 * beta2);
    let ema = |acc: &ParamVector, decay: f64| -> Vec<f64> {
        acc.iter().zip(sigma_sq.iter()).map(|(&a, &s)| decay * a + (1.0 - decay) * s).collect()
    };
    let u = ParamVector::new(ema(u, b1s))?;
    let v = ParamVector::new(ema(v, b2s))?;
    let w = ParamVector::new(ema(w, b12))?;
    let k1 = (1.0 - beta1) * (1.0 - beta1) / (1.0 - b1s);
    let k2 = (1.0 - beta2) * (1.0 - beta2) / (1.0 - b2s);
    let k12 = (1.0 - beta1) * (1.0 - beta2) / (1.0 - b12);
    Ok(MomentumVariances { sigma1_sq: u.scale(k1)?, sigma2_sq: v.scale(k2)?, cross: w.scale(k12)?, u, v, w })
}

/// An optimizer instance: configuration plus state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    state: OptimizerState,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, x0: ParamVector) -> Result<Self> {
        config.validate()?;
        if let Some(index) = x0.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        let dim = x0.len();
        let kind = config.kind;
        let needs_m1 = matches!(kind, OptimizerKind::Momentum | OptimizerKind::Adam | OptimizerKind::VrAdam);
        let needs_m2 = matches!(kind, OptimizerKind::Adam | OptimizerKind::VrAdam);
        let vr_adam = kind == OptimizerKind::VrAdam;
        let reg = if kind.is_variance_regularized() {
            let reg_dim = match config.granularity {
                Granularity::PerParameter => dim,
                Granularity::GlobalScalar => 1,
            };
            Some(RegularizerState::new(reg_dim, config.impact, config.vr_mode)?.with_guard(config.guard)?)
        } else {
            None
        };
        let zeros = |on: bool| on.then(|| ParamVector::zeros(dim));
        let state = OptimizerState {
            x: x0,
            t: 0,
            m1: zeros(needs_m1),
            m2: zeros(needs_m2),
            reg,
            u: zeros(vr_adam),
            v: zeros(vr_adam),
            w: zeros(vr_adam),
        };
        Ok(Optimizer { config, state })
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn x(&self) -> &ParamVector {
        &self.state.x
    }

    pub fn steps(&self) -> u64 {
        self.state.t
    }

    /// One step from the per-sample increments of a mini-batch.
    ///
    /// On a non-finite increment the state is left untouched and the error
    /// names the coordinate. If the update pushes any coordinate beyond
    /// [`DIVERGENCE_THRESHOLD`] (or to a non-finite value) the new state is
    /// kept and [`Error::Diverged`] is returned.
    pub fn step(&mut self, increments: &[ParamVector]) -> Result<StepReport> {
        let first = increments.first().ok_or(Error::Empty("mini-batch with no samples"))?;
        if first.len() != self.state.x.len() {
            return Err(Error::ShapeMismatch { left: self.state.x.len(), right: first.len() });
        }
        for v in increments {
            if let Some(index) = v.first_non_finite() {
                return Err(Error::NonFinite { index });
            }
        }
        match self.config.kind {
            OptimizerKind::VrSgd => self.vr_sgd(increments),
            OptimizerKind::VrAdam => self.vr_adam(increments),
            _ => {
                let mean = mean_of(increments)?;
                self.step_mean(&mean)
            }
        }
    }

    /// One step of a plain kind from an already averaged increment.
    pub fn step_mean(&mut self, mean: &ParamVector) -> Result<StepReport> {
        if mean.len() != self.state.x.len() {
            return Err(Error::ShapeMismatch { left: self.state.x.len(), right: mean.len() });
        }
        if let Some(index) = mean.first_non_finite() {
            return Err(Error::NonFinite { index });
        }
        let increment = match self.config.kind {
            OptimizerKind::Sgd => mean.clone(),
            OptimizerKind::Momentum => {
                let beta = self.config.beta1;
                let m1 = self.state.m1.as_mut().expect("momentum state");
                for (m, g) in m1.iter_mut().zip(mean.iter()) {
                    *m = beta * *m + (1.0 - beta) * g;
                }
                m1.clone()
            }
            OptimizerKind::Adam => self.adam_increment(mean),
            kind => return Err(Error::InvalidArgument(format!("{} needs the per-sample increments of the batch", kind.name()))),
        };
        self.state.t += 1;
        let lambda = ParamVector::filled(mean.len(), 1.0);
        self.apply(&increment, &lambda)?;
        Ok(StepReport { increment, lambda, rho: None, increment_variance: None })
    }

    fn adam_increment(&mut self, mean: &ParamVector) -> ParamVector {
        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let (c1, c2) = self.bias_factors(self.state.t + 1);
        let m1 = self.state.m1.as_mut().expect("adam state");
        let m2 = self.state.m2.as_mut().expect("adam state");
        for ((a, b), g) in m1.iter_mut().zip(m2.iter_mut()).zip(mean.iter()) {
            *a = b1 * *a + (1.0 - b1) * g;
            *b = b2 * *b + (1.0 - b2) * g * g;
        }
        let eps = self.config.adam_eps;
        let data = m1.iter().zip(m2.iter()).map(|(&a, &b)| (a / c1) / ((b / c2).sqrt() + eps)).collect();
        ParamVector::new(data).expect("non-empty")
    }

    /// `(1 − β1^t, 1 − β2^t)`, or ones without bias correction.
    fn bias_factors(&self, t: u64) -> (f64, f64) {
        if self.config.bias_correction {
            let t = t.min(i32::MAX as u64) as i32;
            (1.0 - self.config.beta1.powi(t), 1.0 - self.config.beta2.powi(t))
        } else {
            (1.0, 1.0)
        }
    }

    fn current_impact(&self, t: u64) -> f64 {
        self.config.impact / (1.0 + self.config.impact_decay * (t.saturating_sub(1)) as f64)
    }

    fn regularize(&mut self, rho: &ParamVector) -> Result<ParamVector> {
        let impact = self.current_impact(self.state.t + 1);
        let reg = self.state.reg.as_mut().expect("regularizer state");
        reg.set_impact(impact)?;
        let lambda = reg.observe(rho)?;
        Ok(if lambda.len() == self.state.x.len() { lambda } else { ParamVector::filled(self.state.x.len(), lambda[0]) })
    }

    fn vr_sgd(&mut self, increments: &[ParamVector]) -> Result<StepReport> {
        let stats = match self.config.granularity {
            Granularity::PerParameter => minibatch_stats(increments, self.config.guard)?,
            Granularity::GlobalScalar => minibatch_stats_global(increments, self.config.guard)?,
        };
        let lambda = self.regularize(&stats.scale_free)?;
        self.state.t += 1;
        self.apply(&stats.mean_increment, &lambda)?;
        Ok(StepReport { increment: stats.mean_increment, lambda, rho: Some(stats.scale_free), increment_variance: None })
    }

    fn vr_adam(&mut self, increments: &[ParamVector]) -> Result<StepReport> {
        let m = increments.len();
        if m < 2 {
            return Err(Error::InvalidArgument(format!("vr_adam needs at least two samples per batch, got {m}")));
        }
        let guard = self.config.guard;
        let stats = minibatch_stats(increments, guard)?;
        // v² has expectation (m − 1)/m · σ0² while Var(δ̄) = σ0²/m.
        let sigma_sq = stats.variance.scale(1.0 / (m as f64 - 1.0))?;
        let increment = self.adam_increment(&stats.mean_increment);

        let (b1, b2) = (self.config.beta1, self.config.beta2);
        let rec = adam_variance_recursions(
            self.state.u.as_ref().expect("vr_adam state"),
            self.state.v.as_ref().expect("vr_adam state"),
            self.state.w.as_ref().expect("vr_adam state"),
            &sigma_sq,
            b1,
            b2,
        )?;
        let (c1, c2) = self.bias_factors(self.state.t + 1);
        let m2 = self.state.m2.as_ref().expect("vr_adam state");
        let var: Vec<f64> = (0..increment.len())
            .map(|j| {
                let s1 = rec.sigma1_sq[j] / (c1 * c1);
                let s2 = rec.sigma2_sq[j] / (c2 * c2);
                let cross = rec.cross[j] / (c1 * c2);
                // The cross term's coefficient carries sign(g) · sign(δ) ≥ 0.
                let d = increment[j].abs();
                let p2 = (m2[j] / c2).max(guard * guard);
                ((s1 - 2.0 * d * cross + d * d * s2) / p2).max(0.0)
            })
            .collect();
        let increment_variance = ParamVector::new(var)?;
        let rho = match self.config.granularity {
            Granularity::PerParameter => {
                let data =
                    increment_variance.iter().zip(increment.iter()).map(|(&v, &d)| (v / (d * d).max(guard * guard)).min(RHO_CAP)).collect();
                ParamVector::new(data)?
            }
            Granularity::GlobalScalar => {
                let total = increment_variance.sum();
                let norm_sq = increment.iter().fold(0.0, |acc, d| acc + d * d);
                ParamVector::new(vec![(total / norm_sq.max(guard * guard)).min(RHO_CAP)])?
            }
        };
        let lambda = self.regularize(&rho)?;
        self.state.u = Some(rec.u);
        self.state.v = Some(rec.v);
        self.state.w = Some(rec.w);
        self.state.t += 1;
        self.apply(&increment, &lambda)?;
        Ok(StepReport { increment, lambda, rho: Some(rho), increment_variance: Some(increment_variance) })
    }

    fn apply(&mut self, increment: &ParamVector, lambda: &ParamVector) -> Result<()> {
        let lr = self.config.lr;
        for ((x, &d), &l) in self.state.x.iter_mut().zip(increment.iter()).zip(lambda.iter()) {
            *x -= lr * l * d;
        }
        if let Some(index) = self.state.x.iter().position(|v| !(v.abs() <= DIVERGENCE_THRESHOLD)) {
            return Err(Error::Diverged { index, value: self.state.x[index] });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use proptest::prelude::*;

    fn pv(v: &[f64]) -> ParamVector {
        ParamVector::new(v.to_vec()).unwrap()
    }

    fn opt(kind: OptimizerKind, lr: f64, x0: &[f64]) -> Optimizer {
        Optimizer::new(OptimizerConfig::new(kind, lr), pv(x0)).unwrap()
    }

    #[test]
    fn sgd_examples() {
        let mut o = opt(OptimizerKind::Sgd, 0.1, &[0.0]);
        o.step_mean(&pv(&[2.0])).unwrap();
        assert!((o.x()[0] + 0.2).abs() < 1e-16);
        let mut o = opt(OptimizerKind::Sgd, 0.1, &[0.7]);
        o.step_mean(&pv(&[0.0])).unwrap();
        assert_eq!(o.x(), &pv(&[0.7]));
        let mut o = opt(OptimizerKind::Sgd, 0.5, &[0.0]);
        o.step_mean(&pv(&[1.0])).unwrap();
        o.step_mean(&pv(&[1.0])).unwrap();
        assert_eq!(o.x(), &pv(&[-1.0]));
        assert_eq!(o.steps(), 2);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_moving() {
        let mut o = opt(OptimizerKind::Sgd, 0.1, &[1.0, 2.0]);
        let err = o.step_mean(&pv(&[0.0, f64::NAN])).unwrap_err();
        assert_eq!(err, Error::NonFinite { index: 1 });
        assert_eq!(o.x(), &pv(&[1.0, 2.0]));
        let err = o.step(&[pv(&[1.0, 1.0]), pv(&[f64::INFINITY, 1.0])]).unwrap_err();
        assert_eq!(err, Error::NonFinite { index: 0 });
    }

    #[test]
    fn divergence_is_reported() {
        let mut o = opt(OptimizerKind::Sgd, 1.0, &[0.0, 0.0]);
        let err = o.step_mean(&pv(&[0.0, -2e12])).unwrap_err();
        assert!(matches!(err, Error::Diverged { index: 1, .. }));
    }

    #[test]
    fn vr_sgd_first_step_is_sgd() {
        let mut vr = opt(OptimizerKind::VrSgd, 0.1, &[0.0]);
        let report = vr.step(&[pv(&[1.0]), pv(&[3.0])]).unwrap();
        assert_eq!(report.lambda, pv(&[1.0]));
        let mut sgd = opt(OptimizerKind::Sgd, 0.1, &[0.0]);
        sgd.step(&[pv(&[1.0]), pv(&[3.0])]).unwrap();
        assert_eq!(vr.x(), sgd.x());
    }

    #[test]
    fn vr_sgd_hand_trace() {
        let mut o = opt(OptimizerKind::VrSgd, 0.1, &[0.0]);
        o.step(&[pv(&[1.0]), pv(&[3.0])]).unwrap();
        assert!((o.x()[0] + 0.2).abs() < 1e-15);
        let report = o.step(&[pv(&[2.0]), pv(&[2.0])]).unwrap();
        assert_eq!(report.rho, Some(pv(&[0.0])));
        assert_eq!(report.lambda, pv(&[3.0]));
        assert!((o.x()[0] + 0.8).abs() < 1e-15);
    }

    #[test]
    fn vr_sgd_on_homoskedastic_stream_matches_sgd() {
        // Every batch is a scaled copy of the same pattern, so ρ is constant.
        let mut vr = opt(OptimizerKind::VrSgd, 0.05, &[1.0, -2.0]);
        let mut sgd = opt(OptimizerKind::Sgd, 0.05, &[1.0, -2.0]);
        for t in 0..200 {
            let c = 1.0 + (t % 7) as f64;
            let batch = [pv(&[c, 2.0 * c]), pv(&[3.0 * c, 2.0 * c]), pv(&[2.0 * c, 5.0 * c]), pv(&[2.0 * c, -c])];
            let r = vr.step(&batch).unwrap();
            sgd.step(&batch).unwrap();
            assert!(r.lambda.iter().all(|&l| (l - 1.0).abs() < 1e-12));
        }
        for j in 0..2 {
            assert!((vr.x()[j] - sgd.x()[j]).abs() < 1e-9);
        }
    }

    #[test]
    fn vr_sgd_with_zero_impact_is_bit_identical_to_sgd() {
        let mut cfg = OptimizerConfig::new(OptimizerKind::VrSgd, 0.05);
        cfg.impact = 0.0;
        let mut vr = Optimizer::new(cfg, pv(&[1.0, 2.0, 3.0])).unwrap();
        let mut sgd = opt(OptimizerKind::Sgd, 0.05, &[1.0, 2.0, 3.0]);
        let mut rng = RngStream::new(4, 0);
        for _ in 0..300 {
            let batch: Vec<ParamVector> =
                (0..5).map(|_| ParamVector::new((0..3).map(|_| rng.normal(1.0, 2.0)).collect()).unwrap()).collect();
            vr.step(&batch).unwrap();
            sgd.step(&batch).unwrap();
        }
        assert_eq!(vr.x(), sgd.x());
    }

    #[test]
    fn vr_sgd_global_scalar_broadcasts() {
        let mut cfg = OptimizerConfig::new(OptimizerKind::VrSgd, 0.1);
        cfg.granularity = Granularity::GlobalScalar;
        let mut o = Optimizer::new(cfg, pv(&[0.0, 0.0])).unwrap();
        o.step(&[pv(&[1.0, 0.0]), pv(&[3.0, 2.0])]).unwrap();
        let r = o.step(&[pv(&[2.0, 1.0]), pv(&[2.0, 1.0])]).unwrap();
        assert_eq!(r.rho.as_ref().unwrap().len(), 1);
        assert_eq!(r.lambda, pv(&[3.0, 3.0]));
    }

    #[test]
    fn momentum_examples() {
        let mut cfg = OptimizerConfig::new(OptimizerKind::Momentum, 0.1);
        cfg.beta1 = 0.0;
        let mut m = Optimizer::new(cfg, pv(&[0.3])).unwrap();
        let mut s = opt(OptimizerKind::Sgd, 0.1, &[0.3]);
        for g in [1.0, -2.0, 0.5] {
            m.step_mean(&pv(&[g])).unwrap();
            s.step_mean(&pv(&[g])).unwrap();
        }
        assert_eq!(m.x(), s.x());

        let mut m = opt(OptimizerKind::Momentum, 0.1, &[0.0]);
        m.step_mean(&pv(&[1.0])).unwrap();
        let r = m.step_mean(&pv(&[1.0])).unwrap();
        assert!((r.increment[0] - 0.19).abs() < 1e-15);

        let mut m = opt(OptimizerKind::Momentum, 0.1, &[4.0]);
        for _ in 0..10 {
            m.step_mean(&pv(&[0.0])).unwrap();
        }
        assert_eq!(m.x(), &pv(&[4.0]));
    }

    #[test]
    fn adam_examples() {
        let mut a = opt(OptimizerKind::Adam, 0.1, &[0.0]);
        let r = a.step_mean(&pv(&[1.0])).unwrap();
        assert!((r.increment[0] - 1.0).abs() <= 1e-8);

        let mut a = opt(OptimizerKind::Adam, 0.1, &[2.0]);
        a.step_mean(&pv(&[0.0])).unwrap();
        assert_eq!(a.x(), &pv(&[2.0]));

        let mut a = opt(OptimizerKind::Adam, 1e-3, &[0.0, 0.0]);
        let mut last = None;
        for _ in 0..5000 {
            last = Some(a.step_mean(&pv(&[3.0, -0.25])).unwrap());
        }
        let inc = last.unwrap().increment;
        assert!((inc[0] - 1.0).abs() < 1e-6 && (inc[1] + 1.0).abs() < 1e-6, "{inc:?}");
    }

    #[test]
    fn adam_without_bias_correction_starts_small() {
        let mut cfg = OptimizerConfig::new(OptimizerKind::Adam, 0.1);
        cfg.bias_correction = false;
        let mut a = Optimizer::new(cfg, pv(&[0.0])).unwrap();
        let r = a.step_mean(&pv(&[1.0])).unwrap();
        // m1 = 0.1, m2 = 0.001
        let expected = 0.1 / (0.001f64.sqrt() + 1e-8);
        assert!((r.increment[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn recursion_examples() {
        let z = pv(&[0.0]);
        let r = adam_variance_recursions(&z, &z, &z, &pv(&[1.0]), 0.9, 0.999).unwrap();
        assert!((r.u[0] - 0.19).abs() < 1e-15);
        let mut u = pv(&[0.0]);
        let (mut v, mut w) = (u.clone(), u.clone());
        for _ in 0..20_000 {
            let r = adam_variance_recursions(&u, &v, &w, &pv(&[2.5]), 0.9, 0.999).unwrap();
            (u, v, w) = (r.u, r.v, r.w);
        }
        for acc in [&u, &v, &w] {
            assert!((acc[0] - 2.5).abs() < 1e-9);
        }
        assert!(adam_variance_recursions(&z, &z, &z, &z, 1.0, 0.5).is_err());
    }

    #[test]
    fn recursions_match_geometric_sums() {
        let mut rng = RngStream::new(8, 0);
        for _ in 0..50 {
            let (b1, b2) = (rng.uniform01() * 0.99, rng.uniform01() * 0.999);
            let sig: Vec<f64> = (0..20).map(|_| rng.uniform01() * 5.0).collect();
            let (mut u, mut v, mut w) = (pv(&[0.0]), pv(&[0.0]), pv(&[0.0]));
            for &s in &sig {
                let r = adam_variance_recursions(&u, &v, &w, &pv(&[s]), b1, b2).unwrap();
                (u, v, w) = (r.u, r.v, r.w);
            }
            let geo = |decay: f64| -> f64 {
                let n = sig.len();
                (1.0 - decay) * sig.iter().enumerate().map(|(i, s)| decay.powi((n - 1 - i) as i32) * s).sum::<f64>()
            };
            for (acc, decay) in [(u[0], b1 * b1), (v[0], b2 * b2), (w[0], b1 * b2)] {
                let want = geo(decay);
                assert!((acc - want).abs() <= 1e-12 * want.abs().max(1e-300), "{acc} vs {want}");
            }
        }
    }

    fn noisy_batch(rng: &mut RngStream, mean: &[f64], sd: f64, m: usize) -> Vec<ParamVector> {
        (0..m).map(|_| ParamVector::new(mean.iter().map(|&g| g + sd * rng.standard_normal()).collect()).unwrap()).collect()
    }

    #[test]
    fn vr_adam_constant_gradients_give_unit_lambda() {
        // Homoskedastic: every batch is the same pattern, so ρ settles to a
        // constant and λ to 1.
        let mut o = opt(OptimizerKind::VrAdam, 1e-3, &[0.0, 0.0]);
        let batch = [pv(&[1.0, -2.0]), pv(&[1.2, -2.5]), pv(&[0.8, -1.5])];
        let gap = |o: &mut Optimizer, steps: usize| {
            let mut last = None;
            for _ in 0..steps {
                last = Some(o.step(&batch).unwrap());
            }
            last.unwrap().lambda.iter().map(|l| (l - 1.0).abs()).fold(0.0, f64::max)
        };
        let early = gap(&mut o, 20_000);
        let late = gap(&mut o, 180_000);
        assert!(late < early / 5.0 && late < 5e-3, "{early} {late}");
    }

    #[test]
    fn vr_adam_zero_variance_after_warmup_hits_upper_bound() {
        let mut o = opt(OptimizerKind::VrAdam, 1e-3, &[0.0]);
        let mut rng = RngStream::new(3, 3);
        for _ in 0..50 {
            o.step(&noisy_batch(&mut rng, &[1.0], 0.5, 8)).unwrap();
        }
        let mut last = None;
        for _ in 0..5000 {
            last = Some(o.step(&[pv(&[1.0]), pv(&[1.0])]).unwrap());
        }
        let lambda = last.unwrap().lambda[0];
        assert!(lambda > 3.0 - 1e-2 && lambda <= 3.0, "{lambda}");
    }

    #[test]
    fn vr_adam_needs_two_samples() {
        let mut o = opt(OptimizerKind::VrAdam, 1e-3, &[0.0]);
        assert!(o.step(&[pv(&[1.0])]).is_err());
    }

    proptest! {
        #[test]
        fn effective_rate_bounded(seed in 0u64..500, s in 0.0f64..10.0, literal in any::<bool>()) {
            let mut cfg = OptimizerConfig::new(OptimizerKind::VrSgd, 0.01);
            cfg.impact = s;
            if literal {
                cfg.vr_mode = NormalizationMode::AlgorithmLiteral;
            }
            let mut o = Optimizer::new(cfg, pv(&[1.0, -1.0, 0.5])).unwrap();
            let mut rng = RngStream::new(seed, 0);
            for _ in 0..40 {
                let mean = o.x().to_vec();
                let r = o.step(&noisy_batch(&mut rng, &mean, 0.7, 4)).unwrap();
                for &l in r.lambda.iter() {
                    prop_assert!(l > 0.0 && l <= 1.0 + s + 1e-15);
                }
            }
        }

        #[test]
        fn vr_sgd_lambda_is_scale_invariant(seed in 0u64..500, c in prop_oneof![-50.0f64..-0.1, 0.1f64..50.0]) {
            let mut rng = RngStream::new(seed, 2);
            let batches: Vec<Vec<ParamVector>> = (0..30).map(|_| noisy_batch(&mut rng, &[1.0, -0.3], 0.8, 6)).collect();
            let mut a = opt(OptimizerKind::VrSgd, 0.01, &[0.0, 0.0]);
            let mut b = opt(OptimizerKind::VrSgd, 0.01, &[0.0, 0.0]);
            for batch in &batches {
                let scaled: Vec<ParamVector> = batch.iter().map(|v| v.scale(c).unwrap()).collect();
                let la = a.step(batch).unwrap().lambda;
                let lb = b.step(&scaled).unwrap().lambda;
                for j in 0..2 {
                    prop_assert!((la[j] - lb[j]).abs() <= 1e-9 * la[j]);
                }
            }
        }
    }

    #[test]
    fn vr_sgd_approaches_sgd_as_impact_vanishes() {
        let run = |kind: OptimizerKind, s: f64| -> ParamVector {
            let mut cfg = OptimizerConfig::new(kind, 0.05);
            cfg.impact = s;
            let mut o = Optimizer::new(cfg, pv(&[2.0, -1.0])).unwrap();
            let mut rng = RngStream::new(99, 0);
            for _ in 0..200 {
                let mean = o.x().to_vec();
                let batch = noisy_batch(&mut rng, &mean, 0.5, 8);
                o.step(&batch).unwrap();
            }
            o.x().clone()
        };
        let base = run(OptimizerKind::Sgd, 2.0);
        let gaps: Vec<f64> = [1.0, 0.1, 0.01, 0.001]
            .iter()
            .map(|&s| {
                let x = run(OptimizerKind::VrSgd, s);
                x.iter().zip(base.iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
        assert!(gaps[3] < 1e-3, "{gaps:?}");
    }
}
