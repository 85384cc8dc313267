use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Dataset, Problem};
use crate::error::{Error, Result};
use crate::numerics::{ParamVector, RngStream};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense feed-forward classifier with softmax cross-entropy.
///
/// Parameters are flattened layer by layer as the row-major weight matrix
/// `W_k` (`out × in`) followed by the bias `b_k`.
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    data: Dataset,
    classes: Vec<usize>,
    offsets: Vec<usize>,
    dim: usize,
    seed: u64,
    fused: bool,
}

const INIT_STREAM: u64 = 0x4d4c_5000;

#[inline]
fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().fold(0.0, |acc, v| acc + (v - m).exp()).ln()
}

impl Mlp {
    /// `sizes` lists the input width, each hidden width and the class count.
    pub fn new(sizes: &[usize], activation: Activation, data: Dataset, seed: u64) -> Result<Self> {
        if sizes.len() < 3 {
            return Err(Error::InvalidArgument(format!("an MLP needs input, at least one hidden layer and output sizes, got {sizes:?}")));
        }
        if sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("layer sizes must be positive, got {sizes:?}")));
        }
        if sizes[0] != data.width() {
            return Err(Error::ShapeMismatch { left: sizes[0], right: data.width() });
        }
        let n_classes = *sizes.last().expect("len >= 3");
        let classes = data.class_labels()?;
        if let Some(i) = classes.iter().position(|&c| c >= n_classes) {
            return Err(Error::InvalidArgument(format!("row {i}: class {} but only {n_classes} outputs", classes[i])));
        }
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut dim = 0;
        for w in sizes.windows(2) {
            offsets.push(dim);
            dim += w[1] * w[0] + w[1];
        }
        Ok(Mlp { sizes: sizes.to_vec(), activation, data, classes, offsets, dim, seed, fused: false })
    }

    /// Route [`Problem::batch_grads`] through the matrix-batched pass.
    pub fn with_fused_batches(mut self, fused: bool) -> Self {
        self.fused = fused;
        self
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    fn layers(&self) -> usize {
        self.sizes.len() - 1
    }

    fn weights<'a>(&self, x: &'a [f64], k: usize) -> (&'a [f64], &'a [f64]) {
        let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
        let start = self.offsets[k];
        let w = &x[start..start + n_in * n_out];
        let b = &x[start + n_in * n_out..start + n_in * n_out + n_out];
        (w, b)
    }

    /// Pre-activations and activations of every layer; the last entry of
    /// `acts` holds the logits.
    fn forward(&self, x: &[f64], input: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut pre = Vec::with_capacity(self.layers());
        let mut acts = vec![input.to_vec()];
        for k in 0..self.layers() {
            let (w, b) = self.weights(x, k);
            let a = acts.last().expect("non-empty");
            let z: Vec<f64> =
                w.chunks(self.sizes[k]).zip(b).map(|(row, bias)| row.iter().zip(a).fold(*bias, |acc, (wv, av)| acc + wv * av)).collect();
            let out = if k + 1 < self.layers() { z.iter().map(|&v| self.activation.apply(v)).collect() } else { z.clone() };
            pre.push(z);
            acts.push(out);
        }
        (pre, acts)
    }

    /// Class scores for one input row.
    pub fn logits(&self, x: &[f64], input: &[f64]) -> Vec<f64> {
        self.forward(x, input).1.pop().expect("non-empty")
    }

    /// Per-sample gradients computed with whole-batch matrix products.
    pub fn batch_grads_fused(&self, x: &[f64], indices: &[usize]) -> Vec<ParamVector> {
        let b = indices.len();
        let n_in = self.sizes[0];
        let mut a = DMatrix::<f64>::zeros(n_in, b);
        for (col, &i) in indices.iter().enumerate() {
            a.column_mut(col).copy_from_slice(self.data.row(i));
        }
        let mut pre = Vec::with_capacity(self.layers());
        let mut acts = vec![a];
        let mut mats = Vec::with_capacity(self.layers());
        for k in 0..self.layers() {
            let (w, bias) = self.weights(x, k);
            let w = DMatrix::from_row_slice(self.sizes[k + 1], self.sizes[k], w);
            let bias = DVector::from_column_slice(bias);
            let mut z = &w * acts.last().expect("non-empty");
            for mut col in z.column_iter_mut() {
                col += &bias;
            }
            let out = if k + 1 < self.layers() { z.map(|v| self.activation.apply(v)) } else { z.clone() };
            pre.push(z);
            acts.push(out);
            mats.push(w);
        }
        let logits = acts.last().expect("non-empty");
        let mut delta = logits.clone();
        for (col, &i) in indices.iter().enumerate() {
            let z: Vec<f64> = logits.column(col).iter().copied().collect();
            let lse = log_sum_exp(&z);
            for (c, v) in delta.column_mut(col).iter_mut().enumerate() {
                *v = (z[c] - lse).exp() - if c == self.classes[i] { 1.0 } else { 0.0 };
            }
        }
        let mut grads = vec![vec![0.0; self.dim]; b];
        for k in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let start = self.offsets[k];
            let prev = &acts[k];
            for (col, g) in grads.iter_mut().enumerate() {
                let d = delta.column(col);
                let a_prev = prev.column(col);
                for r in 0..n_out {
                    let row = &mut g[start + r * n_in..start + (r + 1) * n_in];
                    row.iter_mut().zip(a_prev.iter()).for_each(|(gv, av)| *gv = d[r] * av);
                }
                g[start + n_in * n_out..start + n_in * n_out + n_out].copy_from_slice(d.as_slice());
            }
            if k > 0 {
                let mut back = mats[k].transpose() * &delta;
                let (z, a) = (&pre[k - 1], &acts[k]);
                for ((bv, &zv), &av) in back.iter_mut().zip(z.iter()).zip(a.iter()) {
                    *bv *= self.activation.derivative(zv, av);
                }
                delta = back;
            }
        }
        grads.into_iter().map(|g| ParamVector::new(g).expect("dim >= 1")).collect()
    }
}

impl Problem for Mlp {
    fn name(&self) -> &str {
        "mlp"
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn num_samples(&self) -> Option<usize> {
        Some(self.data.len())
    }

    fn sample_loss(&self, x: &[f64], i: usize) -> f64 {
        let z = self.logits(x, self.data.row(i));
        log_sum_exp(&z) - z[self.classes[i]]
    }

    fn sample_grad(&self, x: &[f64], i: usize, out: &mut [f64]) {
        let (pre, acts) = self.forward(x, self.data.row(i));
        let logits = acts.last().expect("non-empty");
        let lse = log_sum_exp(logits);
        let mut delta: Vec<f64> =
            logits.iter().enumerate().map(|(c, &z)| (z - lse).exp() - if c == self.classes[i] { 1.0 } else { 0.0 }).collect();
        for k in (0..self.layers()).rev() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let start = self.offsets[k];
            let a_prev = &acts[k];
            for r in 0..n_out {
                let row = &mut out[start + r * n_in..start + (r + 1) * n_in];
                row.iter_mut().zip(a_prev).for_each(|(g, a)| *g = delta[r] * a);
            }
            out[start + n_in * n_out..start + n_in * n_out + n_out].copy_from_slice(&delta);
            if k > 0 {
                let (w, _) = self.weights(x, k);
                let mut back = vec![0.0; n_in];
                for (r, row) in w.chunks(n_in).enumerate() {
                    back.iter_mut().zip(row).for_each(|(bv, wv)| *bv += wv * delta[r]);
                }
                for ((bv, &z), &a) in back.iter_mut().zip(&pre[k - 1]).zip(&acts[k]) {
                    *bv *= self.activation.derivative(z, a);
                }
                delta = back;
            }
        }
    }

    fn batch_grads(&self, x: &[f64], indices: &[usize]) -> Vec<ParamVector> {
        if self.fused {
            return self.batch_grads_fused(x, indices);
        }
        indices
            .iter()
            .map(|&i| {
                let mut g = vec![0.0; self.dim];
                self.sample_grad(x, i, &mut g);
                ParamVector::new(g).expect("dim >= 1")
            })
            .collect()
    }

    fn accuracy(&self, x: &[f64]) -> Option<f64> {
        let hits = (0..self.data.len())
            .filter(|&i| {
                let z = self.logits(x, self.data.row(i));
                let best = z.iter().enumerate().fold(0, |best, (c, &v)| if v > z[best] { c } else { best });
                best == self.classes[i]
            })
            .count();
        Some(hits as f64 / self.data.len() as f64)
    }

    /// Uniform on `±1/sqrt(fan_in)` for weights and biases alike.
    fn initial_point(&self, seed: u64) -> ParamVector {
        let mut rng = RngStream::new(self.seed ^ seed, INIT_STREAM);
        let mut x = Vec::with_capacity(self.dim);
        for k in 0..self.layers() {
            let (n_in, n_out) = (self.sizes[k], self.sizes[k + 1]);
            let bound = 1.0 / (n_in as f64).sqrt();
            for _ in 0..n_out * n_in + n_out {
                x.push(bound * (2.0 * rng.uniform01() - 1.0));
            }
        }
        ParamVector::new(x).expect("dim >= 1")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
    use crate::problems::{finite_difference_check, gaussian_blobs, IncrementStream};

    #[test]
    fn symmetric_start_has_log_two_loss() {
        let d = Dataset::new(vec![0.0, 0.0], vec![1.0], 2).unwrap();
        let net = Mlp::new(&[2, 3, 2], Activation::Tanh, d, 0).unwrap();
        let x = vec![0.0; net.dim()];
        assert!((net.sample_loss(&x, 0) - std::f64::consts::LN_2).abs() < 1e-15);
        let mut g = vec![0.0; net.dim()];
        net.sample_grad(&x, 0, &mut g);
        // output bias gradient = logit gradient
        let logit_grad = &g[net.dim() - 2..];
        assert!((logit_grad[0] + logit_grad[1]).abs() < 1e-15);
        assert!((logit_grad[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constructor_errors() {
        let d = Dataset::new(vec![0.0, 0.0], vec![2.0], 2).unwrap();
        assert!(Mlp::new(&[2, 2], Activation::Tanh, d.clone(), 0).is_err());
        assert!(Mlp::new(&[3, 2, 2], Activation::Tanh, d.clone(), 0).is_err());
        assert!(Mlp::new(&[2, 2, 2], Activation::Tanh, d, 0).is_err());
    }

    #[test]
    fn tanh_gradients_match_finite_differences() {
        let mut rng = RngStream::new(21, 0);
        let data = gaussian_blobs(40, 3, 2.0, &mut rng).unwrap();
        let net = Mlp::new(&[3, 5, 4, 2], Activation::Tanh, data, 3).unwrap();
        for k in 0..100 {
            let x: Vec<f64> = (0..net.dim()).map(|_| rng.standard_normal()).collect();
            let check = finite_difference_check(&net, &x, k % 40, 1e-6);
            assert!(check.relative_error < 1e-4, "{check:?}");
        }
    }

    #[test]
    fn fused_batches_agree_with_single_sample_passes() {
        let mut rng = RngStream::new(22, 0);
        let data = gaussian_blobs(64, 4, 1.0, &mut rng).unwrap();
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(&[4, 8, 6, 3], act, data.clone(), 1).unwrap();
            let x: Vec<f64> = (0..net.dim()).map(|_| rng.standard_normal()).collect();
            let idx: Vec<usize> = (0..64).rev().step_by(3).collect();
            let looped = net.batch_grads(&x, &idx);
            let fused = net.batch_grads_fused(&x, &idx);
            for (a, b) in looped.iter().zip(&fused) {
                for (u, v) in a.iter().zip(b.iter()) {
                    assert!((u - v).abs() <= 1e-10 * u.abs().max(1.0), "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn sgd_trains_blobs_to_high_accuracy() {
        let mut rng = RngStream::new(23, 0);
        let data = gaussian_blobs(500, 2, 5.0, &mut rng).unwrap();
        let net = Mlp::new(&[2, 8, 2], Activation::Tanh, data, 5).unwrap().with_fused_batches(true);
        let mut opt = Optimizer::new(OptimizerConfig::new(OptimizerKind::Sgd, 0.1), net.initial_point(0)).unwrap();
        let mut stream = IncrementStream::new(&net, None, 20, RngStream::new(23, 1), RngStream::new(23, 2)).unwrap();
        let mut epochs_used = 0;
        for epoch in 1..=50 {
            loop {
                let batch = stream.next_batch(opt.x());
                opt.step(&batch.increments).unwrap();
                if stream.at_epoch_boundary() {
                    break;
                }
            }
            epochs_used = epoch;
            if net.accuracy(opt.x()).unwrap() >= 0.95 {
                break;
            }
        }
        assert!(net.accuracy(opt.x()).unwrap() >= 0.95, "after {epochs_used} epochs");
    }
}
