use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Time profile of the per-sample noise variance `σ0²(t)`.
///
/// `t` counts optimizer steps from zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSchedule {
    Constant {
        variance: f64,
    },
    /// `burst` for the first `duration` steps of every `period`, `base` otherwise.
    PeriodicBurst {
        base: f64,
        burst: f64,
        period: u64,
        duration: u64,
    },
    /// Linear from `start` to `end` over `steps`, then held at `end`.
    Ramp {
        start: f64,
        end: f64,
        steps: u64,
    },
    /// Alternating blocks of `block` steps, starting low.
    TwoLevel {
        low: f64,
        high: f64,
        block: u64,
    },
}

impl NoiseSchedule {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        let positive = |name: &str, v: u64| {
            if v > 0 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be >= 1")))
            }
        };
        match *self {
            NoiseSchedule::Constant { variance } => nonneg("variance", variance),
            NoiseSchedule::PeriodicBurst { base, burst, period, duration } => {
                nonneg("base", base)?;
                nonneg("burst", burst)?;
                positive("period", period)?;
                if duration > period {
                    return Err(Error::InvalidArgument(format!("duration {duration} exceeds period {period}")));
                }
                Ok(())
            }
            NoiseSchedule::Ramp { start, end, steps } => {
                nonneg("start", start)?;
                nonneg("end", end)?;
                positive("steps", steps)
            }
            NoiseSchedule::TwoLevel { low, high, block } => {
                nonneg("low", low)?;
                nonneg("high", high)?;
                positive("block", block)
            }
        }
    }

    pub fn variance(&self, t: u64) -> f64 {
        match *self {
            NoiseSchedule::Constant { variance } => variance,
            NoiseSchedule::PeriodicBurst { base, burst, period, duration } => {
                if t % period < duration {
                    burst
                } else {
                    base
                }
            }
            NoiseSchedule::Ramp { start, end, steps } => {
                if t >= steps {
                    end
                } else {
                    start + (end - start) * t as f64 / steps as f64
                }
            }
            NoiseSchedule::TwoLevel { low, high, block } => {
                if (t / block).is_multiple_of(2) {
                    low
                } else {
                    high
                }
            }
        }
    }
}

/// Distribution of the standardized noise.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseShape {
    #[default]
    Gaussian,
    Uniform,
    Laplace,
    /// `Exp(1) − 1`: right-skewed.
    CenteredExponential,
}

impl NoiseShape {
    /// Mean-zero, unit-variance draw.
    pub fn draw(self, rng: &mut RngStream) -> f64 {
        match self {
            NoiseShape::Gaussian => rng.standard_normal(),
            NoiseShape::Uniform => (rng.uniform01() - 0.5) * 12f64.sqrt(),
            NoiseShape::Laplace => {
                let a = -libm::log(1.0 - rng.uniform01());
                let b = -libm::log(1.0 - rng.uniform01());
                (a - b) * std::f64::consts::FRAC_1_SQRT_2
            }
            NoiseShape::CenteredExponential => -libm::log(1.0 - rng.uniform01()) - 1.0,
        }
    }

    /// Third and fourth central moments `(ι³, η⁴)` at variance `σ²`.
    pub fn moments(self, variance: f64) -> (f64, f64) {
        let s3 = variance * variance.sqrt();
        let s4 = variance * variance;
        match self {
            NoiseShape::Gaussian => (0.0, 3.0 * s4),
            NoiseShape::Uniform => (0.0, 1.8 * s4),
            NoiseShape::Laplace => (0.0, 6.0 * s4),
            NoiseShape::CenteredExponential => (2.0 * s3, 9.0 * s4),
        }
    }

    pub fn is_symmetric(self) -> bool {
        self != NoiseShape::CenteredExponential
    }
}

/// How the scheduled variance is applied to a gradient coordinate.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScaling {
    /// Noise variance is `σ0²(t)`.
    #[default]
    Absolute,
    /// Noise variance is `σ0²(t) · g_j²`, so the signal-to-noise ratio
    /// follows the schedule regardless of how large the gradient is.
    Relative,
}

/// Additive per-sample gradient noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub schedule: NoiseSchedule,
    #[serde(default)]
    pub shape: NoiseShape,
    #[serde(default)]
    pub scaling: NoiseScaling,
}

impl NoiseSpec {
    pub fn gaussian(schedule: NoiseSchedule) -> Self {
        NoiseSpec { schedule, shape: NoiseShape::Gaussian, scaling: NoiseScaling::Absolute }
    }

    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()
    }

    /// Adds one noise draw per coordinate to `grad` (the clean gradient the
    /// sample would have had).
    pub fn perturb(&self, t: u64, grad: &mut [f64], rng: &mut RngStream) {
        let sd = self.schedule.variance(t).sqrt();
        for g in grad.iter_mut() {
            let scale = match self.scaling {
                NoiseScaling::Absolute => sd,
                NoiseScaling::Relative => sd * g.abs(),
            };
            *g += scale * self.shape.draw(rng);
        }
    }
}
