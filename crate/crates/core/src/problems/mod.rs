//! Objectives with per-sample losses and gradients, noise models, and the
//! machinery that turns them into streams of mini-batch increments.

mod data;
mod mlp;
mod models;
mod noise;

pub use data::{gaussian_blobs, linear_data, Dataset};
pub use mlp::{Activation, Mlp};
pub use models::{LinearRegression, LogisticRegression, Quadratic};
pub use noise::{NoiseScaling, NoiseSchedule, NoiseShape, NoiseSpec};

use crate::error::{Error, Result};
use crate::numerics::{ParamVector, RngStream};

/// A differentiable objective `f(x) = (1/N) Σ f(x, z_i)`.
///
/// Synthetic problems have no dataset (`num_samples() == None`); their
/// single "sample" index is 0 and randomness enters only through injected
/// gradient noise.
pub trait Problem: Send + Sync {
    fn name(&self) -> &str;

    fn dim(&self) -> usize;

    fn num_samples(&self) -> Option<usize>;

    fn sample_loss(&self, x: &[f64], i: usize) -> f64;

    /// Writes `∇f(x, z_i)` into `out`.
    fn sample_grad(&self, x: &[f64], i: usize, out: &mut [f64]);

    /// Per-sample gradients of a batch, in index order.
    fn batch_grads(&self, x: &[f64], indices: &[usize]) -> Vec<ParamVector> {
        indices
            .iter()
            .map(|&i| {
                let mut g = vec![0.0; self.dim()];
                self.sample_grad(x, i, &mut g);
                ParamVector::new(g).expect("dim >= 1")
            })
            .collect()
    }

    /// Full-data loss.
    fn loss(&self, x: &[f64]) -> f64 {
        match self.num_samples() {
            None => self.sample_loss(x, 0),
            Some(n) => (0..n).fold(0.0, |acc, i| acc + self.sample_loss(x, i)) / n as f64,
        }
    }

    /// Full-data gradient.
    fn grad(&self, x: &[f64], out: &mut [f64]) {
        match self.num_samples() {
            None => self.sample_grad(x, 0, out),
            Some(n) => {
                let mut g = vec![0.0; self.dim()];
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..n {
                    self.sample_grad(x, i, &mut g);
                    out.iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                }
                out.iter_mut().for_each(|o| *o /= n as f64);
            }
        }
    }

    /// Minimizer and minimum, when known in closed form.
    fn optimum(&self) -> Option<(ParamVector, f64)> {
        None
    }

    /// Gradient Lipschitz constant `L`.
    fn lipschitz(&self) -> Option<f64> {
        None
    }

    /// Strong-convexity modulus `l`.
    fn strong_convexity(&self) -> Option<f64> {
        None
    }

    fn is_convex(&self) -> bool {
        false
    }

    /// Classification accuracy over the dataset, for classifiers.
    fn accuracy(&self, _x: &[f64]) -> Option<f64> {
        None
    }

    /// Deterministic starting point.
    fn initial_point(&self, _seed: u64) -> ParamVector {
        ParamVector::zeros(self.dim())
    }
}

/// Result of [`finite_difference_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    /// `‖g_fd − g‖ / max(‖g_fd‖, ‖g‖)`, or 0 when both norms are below 1e-10.
    pub relative_error: f64,
    pub analytic_norm: f64,
}

/// Compares the analytic per-sample gradient with central differences of
/// the per-sample loss at step `h`.
pub fn finite_difference_check(problem: &dyn Problem, x: &[f64], i: usize, h: f64) -> GradCheck {
    let dim = problem.dim();
    let mut analytic = vec![0.0; dim];
    problem.sample_grad(x, i, &mut analytic);
    let mut probe = x.to_vec();
    let mut diff_sq = 0.0;
    let mut fd_sq = 0.0;
    for j in 0..dim {
        let orig = probe[j];
        probe[j] = orig + h;
        let up = problem.sample_loss(&probe, i);
        probe[j] = orig - h;
        let down = problem.sample_loss(&probe, i);
        probe[j] = orig;
        let fd = (up - down) / (2.0 * h);
        diff_sq += (fd - analytic[j]).powi(2);
        fd_sq += fd * fd;
    }
    let a_norm = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let denom = a_norm.max(fd_sq.sqrt());
    let relative_error = if denom < 1e-10 { 0.0 } else { diff_sq.sqrt() / denom };
    GradCheck { relative_error, analytic_norm: a_norm }
}

/// Mini-batch index source.
///
/// Dataset problems are sampled without replacement: each epoch is a fresh
/// shuffle of `0..N` cut into consecutive batches of `m`. A trailing batch
/// with a single index is merged into the one before it so every batch has
/// a within-batch variance. Synthetic problems always return `m` copies of
/// index 0.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    n: Option<usize>,
    m: usize,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
}

impl BatchSampler {
    pub fn new(num_samples: Option<usize>, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if num_samples == Some(0) {
            return Err(Error::Empty("dataset with no samples"));
        }
        Ok(BatchSampler { n: num_samples, m: batch_size, order: Vec::new(), cursor: 0, epoch: 0 })
    }

    /// Number of completed or started epochs.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Whether the next call to [`next_batch`](Self::next_batch) starts a new epoch.
    pub fn at_epoch_boundary(&self) -> bool {
        self.cursor >= self.order.len()
    }

    pub fn next_batch(&mut self, rng: &mut RngStream) -> Vec<usize> {
        let Some(n) = self.n else {
            return vec![0; self.m];
        };
        if self.cursor >= self.order.len() {
            self.order = (0..n).collect();
            rng.shuffle(&mut self.order);
            self.cursor = 0;
            self.epoch += 1;
        }
        let mut end = (self.cursor + self.m).min(n);
        if n - end == 1 && end - self.cursor > 1 {
            end = n;
        }
        let batch = self.order[self.cursor..end].to_vec();
        self.cursor = end;
        batch
    }
}

/// One mini-batch of increments together with what generated it.
#[derive(Debug, Clone)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub increments: Vec<ParamVector>,
    /// Scheduled noise variance at this step (0 without noise).
    pub noise_variance: f64,
}

/// Generator of per-sample increments: clean per-sample gradients of the
/// problem plus optional scheduled noise.
pub struct IncrementStream<'a> {
    problem: &'a dyn Problem,
    noise: Option<NoiseSpec>,
    sampler: BatchSampler,
    sample_rng: RngStream,
    noise_rng: RngStream,
    t: u64,
}

impl<'a> IncrementStream<'a> {
    /// `sample_rng` drives index shuffling and `noise_rng` the injected noise.
    pub fn new(
        problem: &'a dyn Problem,
        noise: Option<NoiseSpec>,
        batch_size: usize,
        sample_rng: RngStream,
        noise_rng: RngStream,
    ) -> Result<Self> {
        if let Some(n) = &noise {
            n.validate()?;
        }
        let sampler = BatchSampler::new(problem.num_samples(), batch_size)?;
        Ok(IncrementStream { problem, noise, sampler, sample_rng, noise_rng, t: 0 })
    }

    pub fn step_index(&self) -> u64 {
        self.t
    }

    pub fn epoch(&self) -> u64 {
        self.sampler.epoch()
    }

    pub fn at_epoch_boundary(&self) -> bool {
        self.sampler.at_epoch_boundary()
    }

    pub fn next_batch(&mut self, x: &[f64]) -> Batch {
        let indices = self.sampler.next_batch(&mut self.sample_rng);
        let mut increments = self.problem.batch_grads(x, &indices);
        let mut noise_variance = 0.0;
        if let Some(spec) = &self.noise {
            noise_variance = spec.schedule.variance(self.t);
            for g in &mut increments {
                spec.perturb(self.t, g.as_mut_slice(), &mut self.noise_rng);
            }
        }
        self.t += 1;
        Batch { indices, increments, noise_variance }
    }
}

/// Convenience constructor mirroring the other problem builders.
pub fn heteroskedastic_stream<'a>(
    problem: &'a dyn Problem,
    schedule: NoiseSchedule,
    batch_size: usize,
    rng: &RngStream,
) -> Result<IncrementStream<'a>> {
    IncrementStream::new(
        problem,
        Some(NoiseSpec::gaussian(schedule)),
        batch_size,
        RngStream::new(rng.seed(), rng.stream_id().wrapping_mul(2)),
        RngStream::new(rng.seed(), rng.stream_id().wrapping_mul(2).wrapping_add(1)),
    )
}
