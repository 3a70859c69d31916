use std::fmt;

use super::{Batch, Objective};
use crate::error::{invalid, Error, Result};

/// `1/2 theta^T A theta + b^T theta` with `A` symmetric positive definite.
///
/// Ignores the batch.
#[derive(Debug, Clone)]
pub struct Quadratic {
    dim: usize,
    a: Vec<f64>,
    b: Vec<f64>,
    chol: Vec<f64>,
}

impl Quadratic {
    /// `a` is row-major `d x d`.
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let dim = b.len();
        if dim == 0 || a.len() != dim * dim {
            return Err(invalid(format!(
                "quadratic needs a {dim}x{dim} matrix, got {} entries",
                a.len()
            )));
        }
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..dim {
            for j in 0..i {
                if (a[i * dim + j] - a[j * dim + i]).abs() > 1e-12 * scale {
                    return Err(invalid(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        let chol = cholesky(&a, dim)
            .ok_or_else(|| invalid("quadratic matrix is not positive definite"))?;
        Ok(Self { dim, a, b, chol })
    }

    pub fn diagonal(diag: &[f64], b: Vec<f64>) -> Result<Self> {
        let d = diag.len();
        let mut a = vec![0.0; d * d];
        for (i, v) in diag.iter().enumerate() {
            a[i * d + i] = *v;
        }
        Self::new(a, b)
    }

    pub fn identity(dim: usize) -> Self {
        Self::diagonal(&vec![1.0; dim], vec![0.0; dim]).expect("identity is SPD")
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn linear_term(&self) -> &[f64] {
        &self.b
    }

    /// `-A^{-1} b`, by Cholesky solve.
    pub fn minimizer(&self) -> Vec<f64> {
        let d = self.dim;
        let l = &self.chol;
        // L y = -b
        let mut y = vec![0.0; d];
        for i in 0..d {
            let s: f64 = (0..i).map(|k| l[i * d + k] * y[k]).sum();
            y[i] = (-self.b[i] - s) / l[i * d + i];
        }
        // L^T x = y
        let mut x = vec![0.0; d];
        for i in (0..d).rev() {
            let s: f64 = (i + 1..d).map(|k| l[k * d + i] * x[k]).sum();
            x[i] = (y[i] - s) / l[i * d + i];
        }
        x
    }

    /// `-1/2 b^T A^{-1} b`.
    pub fn min_value(&self) -> f64 {
        0.5 * super::dot(&self.b, &self.minimizer())
    }

    fn a_times(&self, theta: &[f64]) -> Vec<f64> {
        let d = self.dim;
        (0..d)
            .map(|i| super::dot(&self.a[i * d..(i + 1) * d], theta))
            .collect()
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[f64], _batch: &Batch) -> Result<f64> {
        let at = self.a_times(theta);
        Ok(0.5 * super::dot(theta, &at) + super::dot(&self.b, theta))
    }

    fn loss_and_grad(&self, theta: &[f64], _batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let at = self.a_times(theta);
        let loss = 0.5 * super::dot(theta, &at) + super::dot(&self.b, theta);
        let grad = at.iter().zip(&self.b).map(|(x, b)| x + b).collect();
        Ok((loss, grad))
    }
}

/// Chained Rosenbrock `sum_i 100 (t_{i+1} - t_i^2)^2 + (1 - t_i)^2`.
#[derive(Debug, Clone)]
pub struct Rosenbrock {
    dim: usize,
}

impl Rosenbrock {
    pub fn new(dim: usize) -> Result<Self> {
        if dim < 2 {
            return Err(invalid("rosenbrock needs dimension >= 2"));
        }
        Ok(Self { dim })
    }
}

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, t: &[f64], _batch: &Batch) -> Result<f64> {
        Ok(t.windows(2)
            .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
            .sum())
    }

    fn loss_and_grad(&self, t: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let mut g = vec![0.0; self.dim];
        for i in 0..self.dim - 1 {
            let r = t[i + 1] - t[i] * t[i];
            g[i] += -400.0 * t[i] * r - 2.0 * (1.0 - t[i]);
            g[i + 1] += 200.0 * r;
        }
        Ok((self.loss(t, batch)?, g))
    }
}

/// Binary logistic regression on labels {0, 1}: weights then a bias.
#[derive(Debug, Clone)]
pub struct LogisticRegression {
    in_dim: usize,
}

impl LogisticRegression {
    pub fn new(in_dim: usize) -> Result<Self> {
        if in_dim == 0 {
            return Err(invalid("logistic regression needs at least one input"));
        }
        Ok(Self { in_dim })
    }

    fn labels<'a>(&self, batch: &'a Batch) -> Result<&'a [usize]> {
        if batch.in_dim() != self.in_dim {
            return Err(invalid(format!(
                "batch has {} features, model expects {}",
                batch.in_dim(),
                self.in_dim
            )));
        }
        let labels = batch
            .classes()
            .ok_or_else(|| invalid("logistic regression needs class labels"))?;
        if let Some(bad) = labels.iter().find(|&&y| y > 1) {
            return Err(invalid(format!("label {bad} is not binary")));
        }
        Ok(labels)
    }

    fn logit(&self, theta: &[f64], x: &[f64]) -> f64 {
        super::dot(&theta[..self.in_dim], x) + theta[self.in_dim]
    }
}

// log(1 + e^z) - y z, stable in both tails
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Objective for LogisticRegression {
    fn dim(&self) -> usize {
        self.in_dim + 1
    }

    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        let labels = self.labels(batch)?;
        let total: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| bce_with_logit(self.logit(theta, batch.row(i)), y as f64))
            .sum();
        Ok(total / labels.len() as f64)
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let labels = self.labels(batch)?;
        let n = labels.len() as f64;
        let mut g = vec![0.0; self.dim()];
        let mut total = 0.0;
        for (i, &y) in labels.iter().enumerate() {
            let x = batch.row(i);
            let z = self.logit(theta, x);
            total += bce_with_logit(z, y as f64);
            let r = sigmoid(z) - y as f64;
            for (gj, xj) in g.iter_mut().zip(x) {
                *gj += r * xj;
            }
            g[self.in_dim] += r;
        }
        g.iter_mut().for_each(|v| *v /= n);
        Ok((total / n, g))
    }

    fn accuracy(&self, theta: &[f64], batch: &Batch) -> Option<f64> {
        let labels = self.labels(batch).ok()?;
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(i, &y)| usize::from(self.logit(theta, batch.row(*i)) > 0.0) == y)
            .count();
        Some(hits as f64 / labels.len() as f64)
    }

    fn initial_point(&self, _seed: u64) -> super::ParamVector {
        super::ParamVector::zeros(self.dim())
    }
}

type LossFn = dyn Fn(&[f64], &Batch) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &Batch) -> Vec<f64> + Send + Sync;

/// Closure-backed objective, mostly for tests and ad-hoc experiments.
pub struct FnObjective {
    dim: usize,
    loss: Box<LossFn>,
    grad: Option<Box<GradFn>>,
}

impl FnObjective {
    pub fn new(dim: usize, loss: impl Fn(&[f64], &Batch) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            dim,
            loss: Box::new(loss),
            grad: None,
        }
    }

    pub fn with_grad(
        mut self,
        grad: impl Fn(&[f64], &Batch) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Box::new(grad));
        self
    }

    /// `g^T theta + c`.
    pub fn linear(g: Vec<f64>, c: f64) -> Self {
        let dim = g.len();
        let gg = g.clone();
        Self::new(dim, move |t, _| super::dot(&g, t) + c).with_grad(move |_, _| gg.clone())
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self::new(dim, move |_, _| c).with_grad(move |_, _| vec![0.0; dim])
    }
}

impl fmt::Debug for FnObjective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnObjective")
            .field("dim", &self.dim)
            .field("has_grad", &self.grad.is_some())
            .finish()
    }
}

impl Objective for FnObjective {
    fn dim(&self) -> usize {
        self.dim
    }

    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        Ok((self.loss)(theta, batch))
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        let grad = self
            .grad
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("objective has no gradient".into()))?;
        Ok(((self.loss)(theta, batch), grad(theta, batch)))
    }
}
