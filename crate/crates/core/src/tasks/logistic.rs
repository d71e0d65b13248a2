use crate::error::{ensure_len, Error, Result};
use crate::numcore::{axpy, dot, DenseVector};

/// Binary logistic regression without intercept:
/// `f(w) = mean(softplus(z_i) - y_i z_i) + 0.5 l2 |w|^2` with `z = X w`.
#[derive(Debug, Clone)]
pub struct LogisticPayload {
    n_features: usize,
    /// Row-major `samples x n_features`.
    features: Vec<f64>,
    labels: Vec<f64>,
    l2: f64,
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LogisticPayload {
    pub fn new(features: Vec<f64>, n_features: usize, labels: Vec<u8>, l2: f64) -> Result<Self> {
        if n_features == 0 || labels.is_empty() {
            return Err(Error::InvalidArgument("empty logistic problem".into()));
        }
        ensure_len(labels.len() * n_features, features.len())?;
        if labels.iter().any(|&l| l > 1) {
            return Err(Error::InvalidArgument(
                "logistic labels must be 0 or 1".into(),
            ));
        }
        if !(l2 >= 0.0) {
            return Err(Error::InvalidArgument(format!("l2 must be >= 0, got {l2}")));
        }
        Ok(Self {
            n_features,
            features,
            labels: labels.into_iter().map(f64::from).collect(),
            l2,
        })
    }

    pub fn dim(&self) -> usize {
        self.n_features
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    fn rows(&self) -> impl Iterator<Item = (&[f64], f64)> {
        self.features
            .chunks(self.n_features)
            .zip(self.labels.iter().copied())
    }

    pub fn value(&self, w: &DenseVector) -> f64 {
        let loss: f64 = self
            .rows()
            .map(|(row, y)| {
                let z = dot(row, w);
                softplus(z) - y * z
            })
            .sum();
        loss / self.samples() as f64 + 0.5 * self.l2 * dot(w, w)
    }

    pub fn value_grad(&self, w: &DenseVector) -> (f64, DenseVector) {
        let inv_n = 1.0 / self.samples() as f64;
        let mut grad = vec![0.0; self.n_features];
        let mut loss = 0.0;
        for (row, y) in self.rows() {
            let z = dot(row, w);
            loss += softplus(z) - y * z;
            axpy((sigmoid(z) - y) * inv_n, row, &mut grad);
        }
        axpy(self.l2, w, &mut grad);
        let f = loss * inv_n + 0.5 * self.l2 * dot(w, w);
        (f, DenseVector::from_raw(grad))
    }
}
