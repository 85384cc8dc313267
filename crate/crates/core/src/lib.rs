//! Variance-regularized stochastic optimizers and the numerical checks that
//! go with them.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: parameter vectors, guarded arithmetic, reproducible random streams
//! * [`stats`]: mini-batch variance statistics and the bounded regularizer
//! * [`optim`]: SGD, momentum, Adam and their variance-regularized variants
//! * [`problems`]: objectives with per-sample gradients and noise models
//! * [`theory`]: numerical audits of the convergence bounds

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod numerics;
pub mod optim;
pub mod problems;
pub mod stats;
pub mod theory;

pub use error::{Error, Result};
pub use numerics::{ParamVector, RngStream};
