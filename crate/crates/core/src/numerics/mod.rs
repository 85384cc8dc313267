//! Dense parameter arrays and deterministic random streams.
//!
//! Every reduction here accumulates strictly left to right so that the same
//! input always produces the same bits. Nothing in this module reassociates
//! a sum, and nothing reduces in parallel.

mod rng;

pub use rng::RngStream;

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Denominators smaller than this in magnitude are clamped before division.
pub const DIV_GUARD: f64 = 1e-12;

/// Clamp `d` away from zero: `|d| < eps` becomes `sign(d) * eps`, with the
/// sign of zero (either zero) taken as positive.
#[inline]
pub fn guard_denominator(d: f64, eps: f64) -> f64 {
    if d.abs() < eps {
        if d < 0.0 {
            -eps
        } else {
            eps
        }
    } else {
        d
    }
}

/// Reductions over a dense vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceOp {
    Sum,
    Mean,
    Max,
    L2Norm,
}

/// Reduce a slice with a fixed left-to-right accumulation order.
pub fn reduce(op: ReduceOp, a: &[f64]) -> Result<f64> {
    if a.is_empty() {
        return Err(Error::Empty("reduction over an empty vector"));
    }
    Ok(match op {
        ReduceOp::Sum => sum(a),
        ReduceOp::Mean => sum(a) / a.len() as f64,
        ReduceOp::Max => a.iter().copied().fold(f64::NEG_INFINITY, |m, v| if v.is_nan() || m.is_nan() { f64::NAN } else { m.max(v) }),
        ReduceOp::L2Norm => a.iter().fold(0.0, |acc, v| acc + v * v).sqrt(),
    })
}

#[inline]
fn sum(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |acc, v| acc + v)
}

/// Position of the first NaN or infinity in `a`, if any.
pub fn first_non_finite(a: &[f64]) -> Option<usize> {
    a.iter().position(|v| !v.is_finite())
}

/// Right-hand side of an elementwise operation.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Vector(&'a ParamVector),
    Scalar(f64),
}

impl<'a> From<&'a ParamVector> for Operand<'a> {
    fn from(v: &'a ParamVector) -> Self {
        Operand::Vector(v)
    }
}

impl From<f64> for Operand<'_> {
    fn from(v: f64) -> Self {
        Operand::Scalar(v)
    }
}

/// Flat, fixed-length array of 64-bit floats.
///
/// Holds iterates and every like-shaped quantity derived from them
/// (gradients, batch statistics, regularizers). The length is fixed at
/// construction and is always at least one. Element values are not forced to
/// be finite; use [`ParamVector::first_non_finite`] to query, and note that
/// every arithmetic method reports a non-finite result as an error instead of
/// returning it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ParamVector(Vec<f64>);

impl TryFrom<Vec<f64>> for ParamVector {
    type Error = Error;

    fn try_from(data: Vec<f64>) -> Result<Self> {
        ParamVector::new(data)
    }
}

impl From<ParamVector> for Vec<f64> {
    fn from(v: ParamVector) -> Self {
        v.0
    }
}

impl ParamVector {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Empty("a parameter vector needs at least one element"));
        }
        Ok(ParamVector(data))
    }

    /// # Panics
    /// Panics if `len == 0`.
    pub fn zeros(len: usize) -> Self {
        Self::filled(len, 0.0)
    }

    /// # Panics
    /// Panics if `len == 0`.
    pub fn filled(len: usize, value: f64) -> Self {
        assert!(len > 0, "a parameter vector needs at least one element");
        ParamVector(vec![value; len])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.first_non_finite().is_none()
    }

    pub fn first_non_finite(&self) -> Option<usize> {
        first_non_finite(&self.0)
    }

    fn check_len(&self, other: &ParamVector) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::ShapeMismatch { left: self.len(), right: other.len() });
        }
        Ok(())
    }

    fn finish(data: Vec<f64>) -> Result<ParamVector> {
        match first_non_finite(&data) {
            Some(index) => Err(Error::NonFinite { index }),
            None => Ok(ParamVector(data)),
        }
    }

    fn zip_with<'a>(&self, rhs: impl Into<Operand<'a>>, f: impl Fn(f64, f64) -> f64) -> Result<ParamVector> {
        let data = match rhs.into() {
            Operand::Vector(b) => {
                self.check_len(b)?;
                self.0.iter().zip(b.iter()).map(|(&x, &y)| f(x, y)).collect()
            }
            Operand::Scalar(c) => self.0.iter().map(|&x| f(x, c)).collect(),
        };
        Self::finish(data)
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Result<ParamVector> {
        Self::finish(self.0.iter().map(|&x| f(x)).collect())
    }

    pub fn add<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<ParamVector> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<ParamVector> {
        self.zip_with(rhs, |a, b| a - b)
    }

    pub fn mul<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<ParamVector> {
        self.zip_with(rhs, |a, b| a * b)
    }

    /// Guarded division; see [`guard_denominator`] and [`DIV_GUARD`].
    pub fn div<'a>(&self, rhs: impl Into<Operand<'a>>) -> Result<ParamVector> {
        self.zip_with(rhs, |a, b| a / guard_denominator(b, DIV_GUARD))
    }

    pub fn scale(&self, c: f64) -> Result<ParamVector> {
        self.map(|x| c * x)
    }

    pub fn square(&self) -> Result<ParamVector> {
        self.map(|x| x * x)
    }

    /// Fails with [`Error::NonFinite`] on negative entries.
    pub fn sqrt(&self) -> Result<ParamVector> {
        self.map(f64::sqrt)
    }

    pub fn sum(&self) -> f64 {
        sum(&self.0)
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    pub fn max(&self) -> f64 {
        reduce(ReduceOp::Max, &self.0).expect("non-empty by construction")
    }

    pub fn min(&self) -> f64 {
        self.0.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn l2_norm(&self) -> f64 {
        reduce(ReduceOp::L2Norm, &self.0).expect("non-empty by construction")
    }

    pub fn reduce(&self, op: ReduceOp) -> f64 {
        reduce(op, &self.0).expect("non-empty by construction")
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Elementwise mean of equally sized vectors, accumulated in sample order.
pub fn mean_of(vectors: &[ParamVector]) -> Result<ParamVector> {
    let first = vectors.first().ok_or(Error::Empty("mean of zero vectors"))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        first.check_len(v)?;
        for (a, x) in acc.iter_mut().zip(v.iter()) {
            *a += x;
        }
    }
    let m = vectors.len() as f64;
    for a in &mut acc {
        *a /= m;
    }
    Ok(ParamVector(acc))
}
