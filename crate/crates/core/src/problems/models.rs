use nalgebra::{DMatrix, DVector};

use super::{Dataset, Problem};
use crate::error::{Error, Result};
use crate::numerics::ParamVector;

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

/// `f(x) = (l/2) ‖x‖²`, with `x* = 0`, `f* = 0` and `L = l`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    l: f64,
    dim: usize,
    start: ParamVector,
}

impl Quadratic {
    pub fn new(l: f64, dim: usize) -> Result<Self> {
        if !(l.is_finite() && l > 0.0) {
            return Err(Error::InvalidArgument(format!("curvature l must be finite and > 0, got {l}")));
        }
        if dim == 0 {
            return Err(Error::Empty("quadratic over zero dimensions"));
        }
        Ok(Quadratic { l, dim, start: ParamVector::filled(dim, 1.0) })
    }

    /// Sets the point returned by [`Problem::initial_point`].
    pub fn with_start(mut self, start: ParamVector) -> Result<Self> {
        if start.len() != self.dim {
            return Err(Error::ShapeMismatch { left: self.dim, right: start.len() });
        }
        self.start = start;
        Ok(self)
    }

    pub fn curvature(&self) -> f64 {
        self.l
    }
}

impl Problem for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_samples(&self) -> Option<usize> {
        None
    }

    fn sample_loss(&self, x: &[f64], _i: usize) -> f64 {
        0.5 * self.l * dot(x, x)
    }

    fn sample_grad(&self, x: &[f64], _i: usize, out: &mut [f64]) {
        out.iter_mut().zip(x).for_each(|(o, v)| *o = self.l * v);
    }

    fn optimum(&self) -> Option<(ParamVector, f64)> {
        Some((ParamVector::zeros(self.dim), 0.0))
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.l)
    }

    fn strong_convexity(&self) -> Option<f64> {
        Some(self.l)
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn initial_point(&self, _seed: u64) -> ParamVector {
        self.start.clone()
    }
}

/// Least squares with an optional ridge term spread evenly over samples:
/// `f(w, i) = ½ (w·x_i − y_i)² + (ridge / 2N) ‖w‖²`.
#[derive(Debug, Clone)]
pub struct LinearRegression {
    data: Dataset,
    ridge: f64,
    optimum: ParamVector,
    f_star: f64,
    lipschitz: f64,
    strong: f64,
}

impl LinearRegression {
    pub fn new(data: Dataset, ridge: f64) -> Result<Self> {
        if !(ridge.is_finite() && ridge >= 0.0) {
            return Err(Error::InvalidArgument(format!("ridge must be finite and >= 0, got {ridge}")));
        }
        let (n, d) = (data.len(), data.width());
        let x = DMatrix::from_row_slice(n, d, data.features());
        let y = DVector::from_column_slice(data.labels());
        let mut gram = x.transpose() * &x;
        for j in 0..d {
            gram[(j, j)] += ridge;
        }
        let rhs = x.transpose() * y;
        let w = match gram.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => gram.clone().svd(true, true).solve(&rhs, 1e-12).map_err(|e| Error::Precondition(format!("normal equations: {e}")))?,
        };
        let eig = (gram / n as f64).symmetric_eigenvalues();
        let lipschitz = eig.max();
        let strong = eig.min().max(0.0);
        let mut problem =
            LinearRegression { data, ridge, optimum: ParamVector::new(w.as_slice().to_vec())?, f_star: 0.0, lipschitz, strong };
        problem.f_star = problem.loss(problem.optimum.as_slice());
        Ok(problem)
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl Problem for LinearRegression {
    fn name(&self) -> &str {
        "linear_regression"
    }

    fn dim(&self) -> usize {
        self.data.width()
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn sample_loss(&self, w: &[f64], i: usize) -> f64 {
        let r = dot(w, self.data.row(i)) - self.data.label(i);
        0.5 * r * r + 0.5 * self.ridge / self.data.len() as f64 * dot(w, w)
    }

    fn sample_grad(&self, w: &[f64], i: usize, out: &mut [f64]) {
        let row = self.data.row(i);
        let r = dot(w, row) - self.data.label(i);
        let k = self.ridge / self.data.len() as f64;
        for ((o, &xj), &wj) in out.iter_mut().zip(row).zip(w) {
            *o = r * xj + k * wj;
        }
    }

    fn optimum(&self) -> Option<(ParamVector, f64)> {
        Some((self.optimum.clone(), self.f_star))
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn strong_convexity(&self) -> Option<f64> {
        (self.strong > 0.0).then_some(self.strong)
    }

    fn is_convex(&self) -> bool {
        true
    }
}

/// Binary logistic regression on labels in `{0, 1}`:
/// `f(w, i) = log(1 + exp(−(2y_i − 1) w·x_i))`.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    data: Dataset,
    lipschitz: f64,
}

/// `log(1 + e^a)` without overflow.
#[inline]
fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

#[inline]
fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

impl LogisticRegression {
    pub fn new(data: Dataset) -> Result<Self> {
        if let Some(i) = data.labels().iter().position(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::InvalidArgument(format!("row {i}: logistic labels must be 0 or 1, got {}", data.label(i))));
        }
        let max_sq = (0..data.len()).map(|i| dot(data.row(i), data.row(i))).fold(0.0, f64::max);
        // 1% head-room over the analytic per-sample bound
        let lipschitz = 0.25 * max_sq * 1.01;
        Ok(LogisticRegression { data, lipschitz })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    fn sign(&self, i: usize) -> f64 {
        2.0 * self.data.label(i) - 1.0
    }
}

impl Problem for LogisticRegression {
    fn name(&self) -> &str {
        "logistic_regression"
    }

    fn dim(&self) -> usize {
        self.data.width()
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn sample_loss(&self, w: &[f64], i: usize) -> f64 {
        softplus(-self.sign(i) * dot(w, self.data.row(i)))
    }

    fn sample_grad(&self, w: &[f64], i: usize, out: &mut [f64]) {
        let s = self.sign(i);
        let row = self.data.row(i);
        let k = -s * sigmoid(-s * dot(w, row));
        out.iter_mut().zip(row).for_each(|(o, &xj)| *o = k * xj);
    }

    fn lipschitz(&self) -> Option<f64> {
        Some(self.lipschitz)
    }

    fn is_convex(&self) -> bool {
        true
    }

    fn accuracy(&self, w: &[f64]) -> Option<f64> {
        let hits = (0..self.data.len()).filter(|&i| (dot(w, self.data.row(i)) > 0.0) == (self.data.label(i) == 1.0)).count();
        Some(hits as f64 / self.data.len() as f64)
    }
}
