use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numcore::{dot, DenseVector};

/// Number of parameters of a fully connected network with biases.
pub fn mlp_param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

/// Full-batch classifier: sigmoid hidden layers, softmax output, mean
/// cross-entropy loss.
///
/// Parameters are laid out layer by layer, each as a row-major
/// `out x in` weight matrix followed by `out` biases.
#[derive(Debug, Clone)]
pub struct MlpPayload {
    widths: Vec<usize>,
    /// Row-major `samples x widths[0]`, scaled to `[0, 1]`.
    inputs: Arc<Vec<f64>>,
    labels: Vec<usize>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl MlpPayload {
    pub fn new(widths: Vec<usize>, inputs: Arc<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "bad layer widths {widths:?}"
            )));
        }
        if labels.is_empty() || inputs.len() != labels.len() * widths[0] {
            return Err(Error::InvalidArgument(format!(
                "{} inputs do not form {} samples of width {}",
                inputs.len(),
                labels.len(),
                widths[0]
            )));
        }
        let classes = *widths.last().unwrap();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            widths,
            inputs,
            labels,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn samples(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        mlp_param_count(&self.widths)
    }

    /// Offsets of each layer's weights and biases within the flat vector.
    fn layout(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.widths.len() - 1);
        let mut at = 0;
        for w in self.widths.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            out.push((at, at + fan_in * fan_out));
            at += (fan_in + 1) * fan_out;
        }
        out
    }

    /// Activations of every layer for one sample; the last entry holds logits.
    fn forward(
        &self,
        params: &[f64],
        layout: &[(usize, usize)],
        input: &[f64],
        acts: &mut Vec<Vec<f64>>,
    ) {
        acts.clear();
        acts.push(input.to_vec());
        let last = layout.len() - 1;
        for (l, &(w_at, b_at)) in layout.iter().enumerate() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let prev = &acts[l];
            let mut next = Vec::with_capacity(fan_out);
            for j in 0..fan_out {
                let row = &params[w_at + j * fan_in..w_at + (j + 1) * fan_in];
                let z = params[b_at + j] + dot(row, prev);
                next.push(if l == last { z } else { sigmoid(z) });
            }
            acts.push(next);
        }
    }

    /// Returns `log(sum(exp(z)))`.
    fn log_sum_exp(z: &[f64]) -> f64 {
        let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
    }

    pub fn value(&self, x: &DenseVector) -> f64 {
        let layout = self.layout();
        let p = self.widths[0];
        let mut acts = Vec::new();
        let mut loss = 0.0;
        for (input, &label) in self.inputs.chunks(p).zip(&self.labels) {
            self.forward(x, &layout, input, &mut acts);
            let logits = acts.last().unwrap();
            loss += Self::log_sum_exp(logits) - logits[label];
        }
        loss / self.samples() as f64
    }

    pub fn value_grad(&self, x: &DenseVector) -> (f64, DenseVector) {
        let layout = self.layout();
        let p = self.widths[0];
        let inv_n = 1.0 / self.samples() as f64;
        let mut grad = vec![0.0; x.len()];
        let mut acts = Vec::new();
        let mut loss = 0.0;
        for (input, &label) in self.inputs.chunks(p).zip(&self.labels) {
            self.forward(x, &layout, input, &mut acts);
            let logits = acts.last().unwrap();
            let lse = Self::log_sum_exp(logits);
            loss += lse - logits[label];

            // dL/dz at the output: softmax - onehot
            let mut delta: Vec<f64> = logits.iter().map(|z| (z - lse).exp() * inv_n).collect();
            delta[label] -= inv_n;

            for l in (0..layout.len()).rev() {
                let (w_at, b_at) = layout[l];
                let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
                let prev = &acts[l];
                for j in 0..fan_out {
                    let dj = delta[j];
                    if dj == 0.0 {
                        continue;
                    }
                    grad[b_at + j] += dj;
                    let row = &mut grad[w_at + j * fan_in..w_at + (j + 1) * fan_in];
                    for (gw, a) in row.iter_mut().zip(prev) {
                        *gw += dj * a;
                    }
                }
                if l > 0 {
                    let mut back = vec![0.0; fan_in];
                    for (j, dj) in delta.iter().enumerate() {
                        let row = &x.as_slice()[w_at + j * fan_in..w_at + (j + 1) * fan_in];
                        for (b, w) in back.iter_mut().zip(row) {
                            *b += dj * w;
                        }
                    }
                    for (b, a) in back.iter_mut().zip(prev) {
                        *b *= a * (1.0 - a);
                    }
                    delta = back;
                }
            }
        }
        (loss * inv_n, DenseVector::from_raw(grad))
    }
}
