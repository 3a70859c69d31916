//! Sparse training with sharpness-aware perturbations estimated by zero-order
//! probing.
//!
//! The crate is organised bottom-up:
//!
//! - [`objective`]: the differentiable loss abstraction, built-in objectives
//!   (quadratic, Rosenbrock, logistic regression, tanh/relu MLP) and
//!   synthetic datasets.
//! - [`sparsity`]: binary masks, static mask generators and prune/grow
//!   schedulers.
//! - [`zo`]: random-direction (RGE) and coordinate-wise (CGE) gradient
//!   estimators.
//! - [`optim`]: SGD, SAM and ZO-SAM steps plus the seeded training loop.
//! - [`diagnostics`]: gradient variance, loss slices, sharpness probes and
//!   epochs-to-threshold.
//! - [`harness`]: config parsing, experiment runs, metrics files and run
//!   comparison used by the `zosam` binary.
//!
//! Every vector is a flat `f64` parameter vector; layered models flatten
//! row-major per layer, weights before biases.

pub mod diagnostics;
pub mod error;
pub mod harness;
pub mod objective;
pub mod optim;
mod par;
pub mod rng;
pub mod sparsity;
pub mod zo;

pub use error::{Error, Result};
pub use objective::{Batch, Dataset, Objective, ParamVector};
pub use optim::StepCounters;
pub use sparsity::Mask;
