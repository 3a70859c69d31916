//! Differentiable objectives over flat parameter vectors.
//!
//! An [`Objective`] maps `(theta, batch)` to the batch-mean loss and its exact
//! gradient. The free functions [`eval_loss`], [`eval_grad`] and
//! [`finite_diff_grad`] wrap the trait with dimension checks, finiteness
//! checks and cost accounting.

mod data;
mod mlp;
mod models;

use std::fmt;
use std::ops::{Deref, DerefMut};

use crate::error::{invalid, Error, Result};
use crate::optim::StepCounters;

pub use data::{make_synthetic_dataset, DatasetKind};
pub use mlp::{Activation, Mlp};
pub use models::{FnObjective, LogisticRegression, Quadratic, Rosenbrock};

/// Flat real parameter vector.
#[derive(Clone, Default, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for ParamVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("ParamVector").field(&self.0).finish()
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

impl From<Vec<f64>> for ParamVector {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl FromIterator<f64> for ParamVector {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Supervision attached to a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Real(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(c) => c.len(),
            Targets::Real(r) => r.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// `n` samples stored row-major as an `n x in_dim` matrix plus targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    inputs: Vec<f64>,
    in_dim: usize,
    targets: Targets,
}

impl Batch {
    pub fn new(inputs: Vec<f64>, in_dim: usize, targets: Targets) -> Result<Self> {
        let n = targets.len();
        if n == 0 {
            return Err(invalid("batch must hold at least one sample"));
        }
        if inputs.len() != n * in_dim {
            return Err(invalid(format!(
                "batch inputs hold {} values, expected {n} rows x {in_dim} columns",
                inputs.len()
            )));
        }
        Ok(Self {
            inputs,
            in_dim,
            targets,
        })
    }

    /// One featureless sample, for objectives that ignore data.
    pub fn unit() -> Self {
        Self {
            inputs: Vec::new(),
            in_dim: 0,
            targets: Targets::Real(vec![0.0]),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match &self.targets {
            Targets::Classes(c) => Some(c),
            Targets::Real(_) => None,
        }
    }

    /// Rows `idx` in the given order.
    pub fn select(&self, idx: &[usize]) -> Result<Batch> {
        let mut inputs = Vec::with_capacity(idx.len() * self.in_dim);
        for &i in idx {
            if i >= self.len() {
                return Err(invalid(format!(
                    "row {i} out of range for batch of {}",
                    self.len()
                )));
            }
            inputs.extend_from_slice(self.row(i));
        }
        let targets = match &self.targets {
            Targets::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Targets::Real(r) => Targets::Real(idx.iter().map(|&i| r[i]).collect()),
        };
        Batch::new(inputs, self.in_dim, targets)
    }

    pub fn concat(batches: &[Batch]) -> Result<Batch> {
        let first = batches
            .first()
            .ok_or_else(|| invalid("cannot concatenate zero batches"))?;
        let mut inputs = Vec::new();
        let mut targets = match first.targets {
            Targets::Classes(_) => Targets::Classes(Vec::new()),
            Targets::Real(_) => Targets::Real(Vec::new()),
        };
        for b in batches {
            if b.in_dim != first.in_dim {
                return Err(invalid("batches disagree on input dimension"));
            }
            inputs.extend_from_slice(&b.inputs);
            match (&mut targets, &b.targets) {
                (Targets::Classes(acc), Targets::Classes(c)) => acc.extend_from_slice(c),
                (Targets::Real(acc), Targets::Real(r)) => acc.extend_from_slice(r),
                _ => return Err(invalid("batches disagree on target kind")),
            }
        }
        Batch::new(inputs, first.in_dim, targets)
    }
}

/// An ordered list of batches drawn from one seeded generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    batches: Vec<Batch>,
    n_total: usize,
    seed: u64,
}

impl Dataset {
    pub fn new(batches: Vec<Batch>, seed: u64) -> Result<Self> {
        if batches.is_empty() {
            return Err(invalid("dataset needs at least one batch"));
        }
        let n_total = batches.iter().map(Batch::len).sum();
        Ok(Self {
            batches,
            n_total,
            seed,
        })
    }

    pub fn batches(&self) -> &[Batch] {
        &self.batches
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// All samples as a single batch.
    pub fn full(&self) -> Batch {
        if self.batches.len() == 1 {
            return self.batches[0].clone();
        }
        Batch::concat(&self.batches).expect("dataset batches share a layout")
    }

    /// Re-chunks the samples, in order, into batches of at most `batch_size`.
    pub fn rebatch(&self, batch_size: usize) -> Result<Dataset> {
        if batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        let full = self.full();
        let idx: Vec<usize> = (0..full.len()).collect();
        let batches = idx
            .chunks(batch_size)
            .map(|chunk| full.select(chunk))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(batches, self.seed)
    }

    /// Deterministic holdout split: a seeded permutation, the first
    /// `eval_fraction` of which becomes the evaluation set.
    pub fn split(&self, eval_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        use rand::seq::SliceRandom;
        if !(eval_fraction > 0.0 && eval_fraction < 1.0) {
            return Err(invalid(format!(
                "eval fraction {eval_fraction} not in (0, 1)"
            )));
        }
        let full = self.full();
        let n = full.len();
        let n_eval = ((n as f64) * eval_fraction).round() as usize;
        if n_eval == 0 || n_eval >= n {
            return Err(invalid(format!(
                "cannot split {n} samples with fraction {eval_fraction}"
            )));
        }
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut crate::rng::seeded(seed));
        let eval = full.select(&idx[..n_eval])?;
        let train = full.select(&idx[n_eval..])?;
        Ok((
            Dataset::new(vec![train], seed)?,
            Dataset::new(vec![eval], seed)?,
        ))
    }
}

/// A loss over `(theta, batch)` with an exact gradient.
///
/// Implementations are pure: the same arguments give bit-identical results,
/// and concurrent evaluation from several threads is safe.
pub trait Objective: Send + Sync {
    fn dim(&self) -> usize;

    /// Batch-mean loss. Dimension checks are done by [`eval_loss`].
    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64>;

    /// Batch-mean loss and its gradient.
    fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)>;

    /// Classification accuracy, for objectives that make class predictions.
    fn accuracy(&self, _theta: &[f64], _batch: &Batch) -> Option<f64> {
        None
    }

    /// Seeded starting point; standard normal unless the model knows better.
    fn initial_point(&self, seed: u64) -> ParamVector {
        let mut rng = crate::rng::seeded(seed);
        crate::rng::gaussian_vec(&mut rng, self.dim()).into()
    }
}

fn check_dim(obj: &dyn Objective, theta: &[f64]) -> Result<()> {
    if theta.len() != obj.dim() {
        return Err(invalid(format!(
            "parameter vector has length {}, objective expects {}",
            theta.len(),
            obj.dim()
        )));
    }
    Ok(())
}

fn check_finite(loss: f64) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::NumericOverflow(format!("loss evaluated to {loss}")))
    }
}

/// Batch-mean loss with dimension and finiteness checks. Not counted.
pub fn eval_loss(obj: &dyn Objective, theta: &[f64], batch: &Batch) -> Result<f64> {
    check_dim(obj, theta)?;
    check_finite(obj.loss(theta, batch)?)
}

/// Loss and gradient in one forward+backward pass; bumps both counters by 1.
pub fn eval_loss_grad(
    obj: &dyn Objective,
    theta: &[f64],
    batch: &Batch,
    counters: &mut StepCounters,
) -> Result<(f64, ParamVector)> {
    check_dim(obj, theta)?;
    let (loss, grad) = obj.loss_and_grad(theta, batch)?;
    counters.forward_evals += 1;
    counters.backward_passes += 1;
    let loss = check_finite(loss)?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericOverflow(
            "gradient has non-finite entries".into(),
        ));
    }
    Ok((loss, grad.into()))
}

pub fn eval_grad(
    obj: &dyn Objective,
    theta: &[f64],
    batch: &Batch,
    counters: &mut StepCounters,
) -> Result<ParamVector> {
    eval_loss_grad(obj, theta, batch, counters).map(|(_, g)| g)
}

/// Central differences `(L(theta + delta e_j) - L(theta - delta e_j)) / (2 delta)`.
pub fn finite_diff_grad(
    obj: &dyn Objective,
    theta: &[f64],
    batch: &Batch,
    delta: f64,
) -> Result<ParamVector> {
    if !(delta > 0.0) {
        return Err(invalid(format!(
            "finite-difference step must be positive, got {delta}"
        )));
    }
    check_dim(obj, theta)?;
    let mut probe = theta.to_vec();
    let mut grad = Vec::with_capacity(theta.len());
    for j in 0..theta.len() {
        probe[j] = theta[j] + delta;
        let up = eval_loss(obj, &probe, batch)?;
        probe[j] = theta[j] - delta;
        let down = eval_loss(obj, &probe, batch)?;
        probe[j] = theta[j];
        grad.push((up - down) / (2.0 * delta));
    }
    Ok(grad.into())
}

/// The built-in desk-scale objectives.
#[derive(Debug, Clone)]
pub enum Builtin {
    Quadratic(Quadratic),
    Rosenbrock(Rosenbrock),
    LogisticRegression(LogisticRegression),
    Mlp(Mlp),
}

impl Builtin {
    fn inner(&self) -> &dyn Objective {
        match self {
            Builtin::Quadratic(o) => o,
            Builtin::Rosenbrock(o) => o,
            Builtin::LogisticRegression(o) => o,
            Builtin::Mlp(o) => o,
        }
    }
}

impl Objective for Builtin {
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn loss(&self, theta: &[f64], batch: &Batch) -> Result<f64> {
        self.inner().loss(theta, batch)
    }

    fn loss_and_grad(&self, theta: &[f64], batch: &Batch) -> Result<(f64, Vec<f64>)> {
        self.inner().loss_and_grad(theta, batch)
    }

    fn accuracy(&self, theta: &[f64], batch: &Batch) -> Option<f64> {
        self.inner().accuracy(theta, batch)
    }

    fn initial_point(&self, seed: u64) -> ParamVector {
        self.inner().initial_point(seed)
    }
}
