//! Analysis instruments: windowed gradient variance, loss-surface slices,
//! a sampled sharpness probe and epochs-to-threshold.
//!
//! None of these touch the cost counters; they are measurements, not
//! training work.

use std::collections::VecDeque;
use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::objective::{eval_loss, norm, Dataset, Objective};
use crate::par::map_indexed;
use crate::rng;
use crate::sparsity::Mask;

/// Mean over active coordinates of the unbiased per-coordinate variance
/// across a window of gradients.
pub fn gradient_variance<G: AsRef<[f64]>>(grads: &[G], mask: &Mask) -> Result<f64> {
    if grads.len() < 2 {
        return Err(invalid(format!(
            "variance needs a window of at least 2 gradients, got {}",
            grads.len()
        )));
    }
    if grads.iter().any(|g| g.as_ref().len() != mask.len()) {
        return Err(invalid("gradient lengths do not match the mask"));
    }
    let active = mask.active_indices();
    if active.is_empty() {
        return Err(invalid("mask has no active coordinates"));
    }
    // Welford per coordinate
    let w = grads.len();
    let mut total = 0.0;
    for &j in &active {
        let (mut mean, mut m2) = (0.0, 0.0);
        for (n, g) in grads.iter().enumerate() {
            let x = g.as_ref()[j];
            let d = x - mean;
            mean += d / (n + 1) as f64;
            m2 += d * (x - mean);
        }
        total += m2 / (w - 1) as f64;
    }
    Ok(total / active.len() as f64)
}

/// `(step, variance)` samples from a sliding window of `window` gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceTrace {
    pub window: usize,
    pub records: Vec<(u64, f64)>,
}

impl VarianceTrace {
    pub fn mean(&self) -> Option<f64> {
        mean(self.records.iter().map(|r| r.1))
    }

    /// Mean over records taken at or after `from_step`.
    pub fn mean_from(&self, from_step: u64) -> Option<f64> {
        mean(
            self.records
                .iter()
                .filter(|r| r.0 >= from_step)
                .map(|r| r.1),
        )
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Keeps the last `window` gradients and records their variance every
/// `every` steps once the window is full.
#[derive(Debug, Clone)]
pub struct VarianceTracker {
    every: usize,
    buf: VecDeque<Vec<f64>>,
    trace: VarianceTrace,
}

impl VarianceTracker {
    pub fn new(window: usize, every: usize) -> Result<Self> {
        if window < 2 || every == 0 {
            return Err(invalid("variance window must be >= 2 and interval >= 1"));
        }
        Ok(Self {
            every,
            buf: VecDeque::with_capacity(window),
            trace: VarianceTrace {
                window,
                records: Vec::new(),
            },
        })
    }

    /// Feeds the gradient of 1-indexed step `step`.
    pub fn push(&mut self, step: u64, grad: &[f64], mask: &Mask) -> Result<Option<f64>> {
        if self.buf.len() == self.trace.window {
            self.buf.pop_front();
        }
        self.buf.push_back(grad.to_vec());
        if self.buf.len() < self.trace.window || !step.is_multiple_of(self.every as u64) {
            return Ok(None);
        }
        let v = gradient_variance(self.buf.make_contiguous(), mask)?;
        self.trace.records.push((step, v));
        Ok(Some(v))
    }

    pub fn trace(&self) -> &VarianceTrace {
        &self.trace
    }

    pub fn into_trace(self) -> VarianceTrace {
        self.trace
    }
}

/// How slice directions are scaled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SliceNorm {
    /// `||dir|| = ||theta ⊙ M||`.
    #[default]
    Global,
    /// `||dir|| = 1`.
    Unit,
}

impl SliceNorm {
    pub fn label(&self) -> &'static str {
        match self {
            SliceNorm::Global => "global",
            SliceNorm::Unit => "unit",
        }
    }
}

impl std::str::FromStr for SliceNorm {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "global" => Ok(SliceNorm::Global),
            "unit" => Ok(SliceNorm::Unit),
            other => Err(invalid(format!("unknown slice normalization `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceParams {
    pub n_dirs: usize,
    pub radius: f64,
    pub n_grid: usize,
    pub seed: u64,
    pub normalization: SliceNorm,
}

impl Default for SliceParams {
    fn default() -> Self {
        Self {
            n_dirs: 1,
            radius: 1.0,
            n_grid: 21,
            seed: 0,
            normalization: SliceNorm::Global,
        }
    }
}

/// Loss on a 1-D line or 2-D plane through `theta ⊙ M`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSlice {
    pub params: SliceParams,
    pub directions: Vec<Vec<f64>>,
    /// Grid coordinates along each axis, `n_grid` points in `[-r, r]`.
    pub offsets: Vec<f64>,
    /// Row-major: index `i * n_grid + j` is offset `(offsets[i], offsets[j])`.
    pub values: Vec<f64>,
}

impl LossSlice {
    pub fn center(&self) -> f64 {
        let c = self.params.n_grid / 2;
        match self.params.n_dirs {
            1 => self.values[c],
            _ => self.values[c * self.params.n_grid + c],
        }
    }

    /// The 1-D profile through the center along axis `axis`.
    pub fn profile(&self, axis: usize) -> Vec<f64> {
        let n = self.params.n_grid;
        if self.params.n_dirs == 1 {
            return self.values.clone();
        }
        let c = n / 2;
        (0..n)
            .map(|i| {
                if axis == 0 {
                    self.values[i * n + c]
                } else {
                    self.values[c * n + i]
                }
            })
            .collect()
    }

    /// Comma-separated grid with a `#` metadata header.
    pub fn to_csv(&self) -> String {
        let p = &self.params;
        let mut out = String::new();
        let _ = writeln!(out, "# loss_slice");
        let _ = writeln!(out, "# seed={}", p.seed);
        let _ = writeln!(out, "# radius={}", p.radius);
        let _ = writeln!(out, "# n_grid={}", p.n_grid);
        let _ = writeln!(out, "# n_dirs={}", p.n_dirs);
        let _ = writeln!(out, "# normalization={}", p.normalization.label());
        if p.n_dirs == 1 {
            out.push_str("a,loss\n");
            for (a, v) in self.offsets.iter().zip(&self.values) {
                let _ = writeln!(out, "{a},{v}");
            }
        } else {
            out.push_str("a,b,loss\n");
            for (i, a) in self.offsets.iter().enumerate() {
                for (j, b) in self.offsets.iter().enumerate() {
                    let _ = writeln!(out, "{a},{b},{}", self.values[i * p.n_grid + j]);
                }
            }
        }
        out
    }
}

fn support_direction(seed: u64, stream: u64, mask: &Mask) -> Vec<f64> {
    let mut u = rng::gaussian_vec(&mut rng::stream(seed, stream), mask.len());
    mask.apply_in_place(&mut u);
    u
}

fn scale_to(v: &mut [f64], target: f64) {
    let n = norm(v);
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x *= target / n);
    }
}

/// Gaussian slice directions restricted to the mask support; the second is
/// Gram-Schmidt orthogonalized against the first.
pub fn slice_directions(theta: &[f64], mask: &Mask, params: &SliceParams) -> Result<Vec<Vec<f64>>> {
    if !(1..=2).contains(&params.n_dirs) {
        return Err(invalid("slices have 1 or 2 directions"));
    }
    if theta.len() != mask.len() {
        return Err(invalid("parameter and mask lengths differ"));
    }
    if mask.count_active() < params.n_dirs {
        return Err(invalid(
            "mask support is too small for the requested directions",
        ));
    }
    let target = match params.normalization {
        SliceNorm::Unit => 1.0,
        SliceNorm::Global => {
            let mut masked = theta.to_vec();
            mask.apply_in_place(&mut masked);
            let n = norm(&masked);
            if n < 1e-12 {
                return Err(invalid(
                    "masked parameters are ~0; global normalization is undefined",
                ));
            }
            n
        }
    };
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(params.n_dirs);
    for i in 0..params.n_dirs {
        let mut u = support_direction(params.seed, i as u64, mask);
        for prev in &dirs {
            let coef = crate::objective::dot(&u, prev) / crate::objective::dot(prev, prev);
            u.iter_mut().zip(prev).for_each(|(x, p)| *x -= coef * p);
        }
        scale_to(&mut u, target);
        dirs.push(u);
    }
    Ok(dirs)
}

/// Full-dataset loss over a grid of offsets along seeded directions.
pub fn loss_slice(
    obj: &dyn Objective,
    theta: &[f64],
    mask: &Mask,
    data: &Dataset,
    params: &SliceParams,
) -> Result<LossSlice> {
    if params.n_grid.is_multiple_of(2) {
        return Err(invalid(format!(
            "grid resolution {} must be odd",
            params.n_grid
        )));
    }
    if !(params.radius > 0.0 && params.radius.is_finite()) {
        return Err(invalid(format!(
            "slice radius {} must be positive",
            params.radius
        )));
    }
    let dirs = slice_directions(theta, mask, params)?;
    let n = params.n_grid;
    let half = (n / 2) as f64;
    let offsets: Vec<f64> = (0..n)
        .map(|i| params.radius * (i as f64 - half) / half.max(1.0))
        .collect();
    let batch = data.full();
    let cells = n.pow(params.n_dirs as u32);
    let values = map_indexed(cells, |c| {
        let (i, j) = (c / n, c % n);
        let (a, b) = if params.n_dirs == 1 {
            (offsets[c], 0.0)
        } else {
            (offsets[i], offsets[j])
        };
        let mut point = theta.to_vec();
        for (k, p) in point.iter_mut().enumerate() {
            *p += a * dirs[0][k];
            if params.n_dirs == 2 {
                *p += b * dirs[1][k];
            }
        }
        mask.apply_in_place(&mut point);
        eval_loss(obj, &point, &batch)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(LossSlice {
        params: params.clone(),
        directions: dirs,
        offsets,
        values,
    })
}

/// Sampled lower bound on `max_{||eps|| <= rho} L(theta + eps) - L(theta)`.
///
/// Probe `i` comes from sub-stream `i` of `seed`, so probe sets are nested
/// in `n_probe` and share directions across radii.
pub fn sharpness_probe(
    obj: &dyn Objective,
    theta: &[f64],
    mask: &Mask,
    batch: &crate::objective::Batch,
    rho: f64,
    n_probe: usize,
    seed: u64,
) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(invalid(format!("probe radius {rho} must be positive")));
    }
    if n_probe == 0 {
        return Err(invalid("need at least one probe"));
    }
    if theta.len() != mask.len() || mask.count_active() == 0 {
        return Err(invalid("probe needs matching lengths and a non-empty mask"));
    }
    let base_point = mask.masked_sum(theta, theta, 0.0);
    let base = eval_loss(obj, &base_point, batch)?;
    let rises = map_indexed(n_probe, |i| {
        let mut eps = support_direction(seed, i as u64, mask);
        scale_to(&mut eps, rho);
        eval_loss(obj, &mask.masked_sum(theta, &eps, 1.0), batch).map(|l| l - base)
    });
    let mut best = f64::NEG_INFINITY;
    for r in rises {
        best = best.max(r?);
    }
    Ok(best)
}

/// First 1-indexed epoch whose accuracy reaches `threshold`.
pub fn epochs_to_threshold(accuracies: &[f64], threshold: f64) -> Option<usize> {
    accuracies
        .iter()
        .position(|&a| a >= threshold)
        .map(|i| i + 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub method: String,
    pub alpha: f64,
    pub threshold: f64,
    pub epoch: Option<usize>,
}
