use rand::Rng;

use super::{Batch, Objective, ParamVector};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    fn slope_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Fully connected classifier with softmax cross-entropy.
///
/// Parameter layout, per layer in order: the `out x in` weight matrix
/// row-major, then the `out` biases. Hidden layers use `activation`; the
/// last layer produces raw logits.
#[derive(Debug, Clone)]
pub struct Mlp {
    layers: Vec<usize>,
    activation: Activation,
    offsets: Vec<usize>,
    dim: usize,
}

impl Mlp {
    pub fn new(layers: Vec<usize>, activation: Activation) -> Result<Self> {
        if layers.len() < 2 {
            return Err(invalid("mlp needs at least an input and an output layer"));
        }
        if layers.contains(&0) {
            return Err(invalid("mlp layer widths must be positive"));
        }
        if *layers.last().unwrap() < 2 {
            return Err(invalid("mlp output layer needs at least two classes"));
        }
        let mut offsets = Vec::with_capacity(layers.len());
        let mut dim = 0;
        for w in layers.windows(2) {
            offsets.push(dim);
            dim += w[0] * w[1] + w[1];
        }
        Ok(Self {
            layers,
            activation,
            offsets,
            dim,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn n_classes(&self) -> usize {
        *self.layers.last().unwrap()
    }

    fn labels<'a>(&self, batch: &'a Batch) -> Result<&'a [usize]> {
        if batch.in_dim() != self.layers[0] {
            return Err(invalid(format!(
                "batch has {} features, mlp expects {}",
                batch.in_dim(),
                self.layers[0]
            )));
        }
        let labels = batch
            .classes()
            .ok_or_else(|| invalid("mlp needs class labels"))?;
        if let Some(bad) = labels.iter().find(|&&y| y >= self.n_classes()) {
            return Err(invalid(format!(
                "label {bad} out of range for {} classes",
                self.n_classes()
            )));
        }
        Ok(labels)
    }

    /// Fills `acts[0] = x`, `acts[l + 1]` = output of layer `l`.
    fn forward(&self, theta: &[f64], x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].copy_from_slice(x);
        let last = self.layers.len() - 2;
        for l in 0..=last {
            let (n_in, n_out) = (self.layers[l], self.layers[l + 1]);
            let w = &theta[self.offsets[l]..self.offsets[l] + n_in * n_out];
            let b = &theta[self.offsets[l] + n_in * n_out..self.offsets[l] + n_in * n_out + n_out];
            let (prev, next) = acts.split_at_mut(l + 1);
            let input = &prev[l];
            let out = &mut next[0];
            for o in 0..n_out {
                let z = super::dot(&w[o * n_in..(o + 1) * n_in], input) + b[o];
                out[o] = if l == last {
                    z
                } else {
                    self.activation.apply(z)
                };
            }
        }
    }

    fn buffers(&self) -> Vec<Vec<f64>> {
        self.layers.iter().map(|&w| vec![0.0; w]).collect()
    }

    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut acts = self.buffers();
        self.forward(theta, x, &mut acts);
        acts.pop().unwrap()
    }
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in z.iter().enumerate() {
        if *v > z[best] {
            best = i;
        }
    }
    best
}

impl Objective for Mlp {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        let labels = self.labels(batch)?;
        let mut acts = self.buffers();
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            self.forward(theta, batch.row(i), &mut acts);
            let z = acts.last().unwrap();
            total += log_sum_exp(z) - z[y];
        }
        Ok(total / labels.len() as f64)
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let labels = self.labels(batch)?;
        let n_layers = self.layers.len() - 1;
        let mut acts = self.buffers();
        let mut deltas = self.buffers();
        let mut grad = vec![0.0; self.dim];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            self.forward(theta, batch.row(i), &mut acts);
            let z = &acts[n_layers];
            let lse = log_sum_exp(z);
            total += lse - z[y];
            for (d, zk) in deltas[n_layers].iter_mut().zip(z) {
                *d = (zk - lse).exp();
            }
            deltas[n_layers][y] -= 1.0;

            for l in (0..n_layers).rev() {
                let (n_in, n_out) = (self.layers[l], self.layers[l + 1]);
                let w_off = self.offsets[l];
                let b_off = w_off + n_in * n_out;
                let (lower, upper) = deltas.split_at_mut(l + 1);
                let delta = &upper[0];
                let input = &acts[l];
                for o in 0..n_out {
                    let d = delta[o];
                    let row = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (g, a) in row.iter_mut().zip(input) {
                        *g += d * a;
                    }
                    grad[b_off + o] += d;
                }
                if l > 0 {
                    let back = &mut lower[l];
                    for (j, bj) in back.iter_mut().enumerate() {
                        let s: f64 = (0..n_out)
                            .map(|o| theta[w_off + o * n_in + j] * delta[o])
                            .sum();
                        *bj = s * self.activation.slope_from_output(input[j]);
                    }
                }
            }
        }
        let n = labels.len() as f64;
        grad.iter_mut().for_each(|g| *g /= n);
        Ok((total / n, grad))
    }

    fn accuracy(&self, theta: &[f64], batch: &Batch) -> Option<f64> {
        let labels = self.labels(batch).ok()?;
        let mut acts = self.buffers();
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(i, &y)| {
                self.forward(theta, batch.row(*i), &mut acts);
                argmax(acts.last().unwrap()) == y
            })
            .count();
        Some(hits as f64 / labels.len() as f64)
    }

    /// Glorot-uniform weights, zero biases.
    fn initial_point(&self, seed: u64) -> ParamVector {
        let mut rng = crate::rng::seeded(seed);
        let mut theta = vec![0.0; self.dim];
        for (l, w) in self.layers.windows(2).enumerate() {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let off = self.offsets[l];
            for v in &mut theta[off..off + w[0] * w[1]] {
                *v = rng.random_range(-limit..limit);
            }
        }
        theta.into()
    }
}
