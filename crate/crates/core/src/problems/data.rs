use crate::error::{Error, Result};
use crate::numerics::RngStream;

/// Dense row-major feature matrix with one label per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    labels: Vec<f64>,
    width: usize,
}

impl Dataset {
    pub fn new(features: Vec<f64>, labels: Vec<f64>, width: usize) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("dataset with no rows"));
        }
        if width == 0 {
            return Err(Error::InvalidArgument("dataset rows need at least one feature".into()));
        }
        if features.len() != labels.len() * width {
            return Err(Error::ShapeMismatch { left: labels.len() * width, right: features.len() });
        }
        if let Some(index) = features.iter().chain(&labels).position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Dataset { features, labels, width })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.width..(i + 1) * self.width]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Keeps the first `n` rows.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.labels.truncate(n);
            self.features.truncate(n * self.width);
        }
    }

    /// Divides every row by its Euclidean norm (all-zero rows are left alone).
    pub fn normalize_rows(&mut self) {
        for row in self.features.chunks_mut(self.width) {
            let norm = row.iter().fold(0.0, |acc, v| acc + v * v).sqrt();
            if norm > 0.0 {
                row.iter_mut().for_each(|v| *v /= norm);
            }
        }
    }

    /// Labels as class indices, checking they are non-negative integers.
    pub fn class_labels(&self) -> Result<Vec<usize>> {
        self.labels
            .iter()
            .enumerate()
            .map(|(i, &y)| {
                if y >= 0.0 && y.fract() == 0.0 {
                    Ok(y as usize)
                } else {
                    Err(Error::InvalidArgument(format!("row {i}: label {y} is not a class index")))
                }
            })
            .collect()
    }
}

/// Two-class Gaussian blobs in `width` dimensions with unit spread, centred
/// at `±separation/2` along the first axis. Labels alternate 0, 1, 0, ...
pub fn gaussian_blobs(n: usize, width: usize, separation: f64, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 || width == 0 {
        return Err(Error::Empty("blob dataset needs rows and columns"));
    }
    let mut features = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = (i % 2) as f64;
        let shift = (class - 0.5) * separation;
        for j in 0..width {
            let z = rng.standard_normal();
            features.push(if j == 0 { z + shift } else { z });
        }
        labels.push(class);
    }
    Dataset::new(features, labels, width)
}

/// Rows with standard-normal features and `y = w·x + noise_sd · z` for a
/// fixed weight vector `w_j = 1 / (j + 1)`.
pub fn linear_data(n: usize, width: usize, noise_sd: f64, rng: &mut RngStream) -> Result<Dataset> {
    if n == 0 || width == 0 {
        return Err(Error::Empty("linear dataset needs rows and columns"));
    }
    let mut features = Vec::with_capacity(n * width);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut y = 0.0;
        for j in 0..width {
            let v = rng.standard_normal();
            y += v / (j + 1) as f64;
            features.push(v);
        }
        labels.push(y + noise_sd * rng.standard_normal());
    }
    Dataset::new(features, labels, width)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_checks() {
        assert!(Dataset::new(vec![], vec![], 2).is_err());
        assert!(Dataset::new(vec![1.0, 2.0, 3.0], vec![1.0, 2.0], 2).is_err());
        let d = Dataset::new(vec![1.0, 2.0, 3.0, 4.0], vec![0.0, 1.0], 2).unwrap();
        assert_eq!(d.row(1), &[3.0, 4.0]);
        assert_eq!(d.class_labels().unwrap(), vec![0, 1]);
    }

    #[test]
    fn normalize_rows_gives_unit_norms() {
        let mut rng = RngStream::new(1, 0);
        let mut d = gaussian_blobs(20, 3, 2.0, &mut rng).unwrap();
        d.normalize_rows();
        for i in 0..d.len() {
            let n: f64 = d.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }
}
