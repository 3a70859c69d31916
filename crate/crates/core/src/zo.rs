//! Zero-order gradient estimators.
//!
//! Both estimators probe the loss at masked points `(theta ± delta v) ⊙ M`
//! and never call the objective's gradient. Direction `i` of a random
//! estimate is drawn from sub-stream `i` of the seed, and the per-direction
//! contributions are summed in index order, so an estimate is reproducible
//! however its evaluations are scheduled.

use crate::error::{invalid, Error, Result};
use crate::objective::{eval_loss, norm, Batch, Objective, ParamVector};
use crate::optim::StepCounters;
use crate::par::map_indexed;
use crate::rng;
use crate::sparsity::Mask;

/// Finite-difference step for the random estimator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSize {
    Fixed(f64),
    /// `1e-3 * (1 + ||theta ⊙ M|| / sqrt(k))`.
    ScaleAware,
}

impl StepSize {
    pub fn resolve(&self, theta: &[f64], mask: &Mask) -> f64 {
        match *self {
            StepSize::Fixed(d) => d,
            StepSize::ScaleAware => {
                let masked: f64 = theta
                    .iter()
                    .zip(mask.bits())
                    .filter(|(_, &b)| b)
                    .map(|(t, _)| t * t)
                    .sum::<f64>()
                    .sqrt();
                let k = mask.count_active().max(1) as f64;
                1e-3 * (1.0 + masked / k.sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgeConfig {
    pub m: usize,
    pub delta: StepSize,
    /// Zero direction components outside the mask support.
    pub restrict_to_support: bool,
}

impl Default for RgeConfig {
    fn default() -> Self {
        Self {
            m: 16,
            delta: StepSize::ScaleAware,
            restrict_to_support: false,
        }
    }
}

impl RgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return Err(invalid("direction count m must be at least 1"));
        }
        if let StepSize::Fixed(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(invalid(format!(
                    "finite-difference step must be positive, got {d}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: ParamVector,
    pub m_used: usize,
    pub delta_used: f64,
    pub function_evals: u64,
}

/// `m` standard-Gaussian vectors in `R^d`; with a mask, off-support
/// components are zeroed.
pub fn sample_directions(
    d: usize,
    m: usize,
    mask: Option<&Mask>,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(invalid("direction count m must be at least 1"));
    }
    if let Some(mask) = mask {
        if mask.len() != d {
            return Err(invalid("mask length does not match direction dimension"));
        }
    }
    Ok((0..m)
        .map(|i| {
            let mut u = rng::gaussian_vec(&mut rng::stream(seed, i as u64), d);
            if let Some(mask) = mask {
                mask.apply_in_place(&mut u);
            }
            u
        })
        .collect())
}

fn check_lengths(obj: &dyn Objective, theta: &[f64], mask: &Mask) -> Result<()> {
    if theta.len() != obj.dim() || mask.len() != obj.dim() {
        return Err(invalid(format!(
            "objective dimension {}, parameters {}, mask {}",
            obj.dim(),
            theta.len(),
            mask.len()
        )));
    }
    Ok(())
}

fn probe_pair(
    obj: &dyn Objective,
    theta: &[f64],
    mask: &Mask,
    batch: &Batch,
    dir: &[f64],
    delta: f64,
) -> Result<f64> {
    let up = eval_loss(obj, &mask.masked_sum(theta, dir, delta), batch)?;
    let down = eval_loss(obj, &mask.masked_sum(theta, dir, -delta), batch)?;
    Ok((up - down) / (2.0 * delta))
}

fn name_direction(err: Error, what: &str, i: usize) -> Error {
    match err {
        Error::NumericOverflow(msg) => Error::NumericOverflow(format!("{what} {i}: {msg}")),
        other => other,
    }
}

/// Random gradient estimate averaged over `cfg.m` Gaussian directions.
///
/// Uses exactly `2m` loss evaluations and no backward pass.
pub fn rge_estimate(
    obj: &dyn Objective,
    theta: &[f64],
    mask: &Mask,
    batch: &Batch,
    cfg: &RgeConfig,
    seed: u64,
    counters: &mut StepCounters,
) -> Result<GradientEstimate> {
    cfg.validate()?;
    check_lengths(obj, theta, mask)?;
    let support = cfg.restrict_to_support.then_some(mask);
    let dirs = sample_directions(theta.len(), cfg.m, support, seed)?;
    let delta = cfg.delta.resolve(theta, mask);
    rge_with_directions(obj, theta, mask, batch, delta, &dirs, counters)
}

/// Random gradient estimate along caller-supplied directions.
pub fn rge_with_directions(
    obj: &dyn Objective,
    theta: &[f64],
    mask: &Mask,
    batch: &Batch,
    delta: f64,
    dirs: &[Vec<f64>],
    counters: &mut StepCounters,
) -> Result<GradientEstimate> {
    check_lengths(obj, theta, mask)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!(
            "finite-difference step must be positive, got {delta}"
        )));
    }
    if dirs.is_empty() || dirs.iter().any(|u| u.len() != theta.len()) {
        return Err(invalid("need at least one direction of matching length"));
    }
    let slopes = map_indexed(dirs.len(), |i| {
        probe_pair(obj, theta, mask, batch, &dirs[i], delta)
            .map_err(|e| name_direction(e, "direction", i))
    });
    let m = dirs.len();
    let mut grad = vec![0.0; theta.len()];
    for (slope, u) in slopes.into_iter().zip(dirs) {
        let s = slope?;
        for (g, uj) in grad.iter_mut().zip(u) {
            *g += s * uj;
        }
    }
    grad.iter_mut().for_each(|g| *g /= m as f64);
    let evals = 2 * m as u64;
    counters.forward_evals += evals;
    Ok(GradientEstimate {
        grad: grad.into(),
        m_used: m,
        delta_used: delta,
        function_evals: evals,
    })
}

/// Coordinate-wise estimate: one central difference per axis, `2d` loss
/// evaluations.
pub fn cge_estimate(
    obj: &dyn Objective,
    theta: &[f64],
    mask: &Mask,
    batch: &Batch,
    delta: f64,
    counters: &mut StepCounters,
) -> Result<GradientEstimate> {
    check_lengths(obj, theta, mask)?;
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(invalid(format!(
            "finite-difference step must be positive, got {delta}"
        )));
    }
    let d = theta.len();
    let grad = map_indexed(d, |j| {
        let mut axis = vec![0.0; d];
        axis[j] = 1.0;
        probe_pair(obj, theta, mask, batch, &axis, delta)
            .map_err(|e| name_direction(e, "coordinate", j))
    })
    .into_iter()
    .collect::<Result<Vec<f64>>>()?;
    let evals = 2 * d as u64;
    counters.forward_evals += evals;
    Ok(GradientEstimate {
        grad: grad.into(),
        m_used: d,
        delta_used: delta,
        function_evals: evals,
    })
}

/// Cosine similarity, zero when either vector vanishes.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    crate::objective::dot(a, b) / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{FnObjective, Quadratic};

    fn ones(d: usize) -> Mask {
        Mask::dense(d)
    }

    #[test]
    fn directions_are_seeded() {
        let a = sample_directions(3, 2, None, 11).unwrap();
        assert_eq!(a, sample_directions(3, 2, None, 11).unwrap());
        assert_ne!(a, sample_directions(3, 2, None, 12).unwrap());
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn restricted_directions_vanish_off_support() {
        let mask = Mask::from_bits(vec![true, false, true]);
        for u in sample_directions(3, 25, Some(&mask), 4).unwrap() {
            assert_eq!(u[1], 0.0);
            assert_ne!(u[0], 0.0);
        }
    }

    #[test]
    fn constant_objective_gives_zero() {
        let f = FnObjective::constant(4, 2.5);
        let mut c = StepCounters::default();
        let cfg = RgeConfig {
            m: 5,
            ..Default::default()
        };
        let est = rge_estimate(&f, &[1.0; 4], &ones(4), &Batch::unit(), &cfg, 0, &mut c).unwrap();
        assert!(est.grad.iter().all(|&g| g == 0.0));
        assert_eq!(est.function_evals, 10);
        assert_eq!((c.forward_evals, c.backward_passes), (10, 0));
    }

    #[test]
    fn linear_map_hand_example() {
        let f = FnObjective::linear(vec![1.0, 0.0], 0.0);
        let mut c = StepCounters::default();
        for delta in [0.5, 1e-3] {
            let est = rge_with_directions(
                &f,
                &[0.0, 0.0],
                &ones(2),
                &Batch::unit(),
                delta,
                &[vec![1.0, 1.0]],
                &mut c,
            )
            .unwrap();
            assert_eq!(est.grad.as_slice(), &[1.0, 1.0]);
        }
    }

    #[test]
    fn squared_norm_hand_example() {
        let f = FnObjective::new(2, |t: &[f64], _: &Batch| t[0] * t[0] + t[1] * t[1]);
        let mut c = StepCounters::default();
        let est = rge_with_directions(
            &f,
            &[1.0, 2.0],
            &ones(2),
            &Batch::unit(),
            0.1,
            &[vec![1.0, 0.0]],
            &mut c,
        )
        .unwrap();
        // (5.21 - 4.81) / 0.2
        assert!((est.grad[0] - 2.0).abs() < 1e-12);
        assert_eq!(est.grad[1], 0.0);
    }

    #[test]
    fn restricted_estimate_is_zero_off_support() {
        let q = Quadratic::identity(6);
        let mask = Mask::from_bits(vec![true, false, true, false, true, false]);
        let cfg = RgeConfig {
            m: 7,
            delta: StepSize::Fixed(1e-3),
            restrict_to_support: true,
        };
        let mut c = StepCounters::default();
        let est = rge_estimate(&q, &[1.0; 6], &mask, &Batch::unit(), &cfg, 3, &mut c).unwrap();
        for j in [1, 3, 5] {
            assert_eq!(est.grad[j], 0.0);
        }
    }

    #[test]
    fn overflow_names_the_direction() {
        let f = FnObjective::new(
            1,
            |t: &[f64], _: &Batch| if t[0] > 0.5 { f64::INFINITY } else { 0.0 },
        );
        let mut c = StepCounters::default();
        let dirs = vec![vec![0.1], vec![1.0]];
        let err = rge_with_directions(&f, &[0.0], &ones(1), &Batch::unit(), 1.0, &dirs, &mut c)
            .unwrap_err();
        match err {
            Error::NumericOverflow(msg) => assert!(msg.contains("direction 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cge_examples() {
        let f = FnObjective::new(2, |t: &[f64], _: &Batch| t[0] * t[0] + 3.0 * t[1]);
        let mut c = StepCounters::default();
        let est = cge_estimate(&f, &[1.0, 1.0], &ones(2), &Batch::unit(), 0.5, &mut c).unwrap();
        assert_eq!(est.grad.as_slice(), &[2.0, 3.0]);
        assert_eq!(est.function_evals, 4);
        let est = cge_estimate(
            &f,
            &[1.0, 1.0],
            &Mask::from_bits(vec![false, true]),
            &Batch::unit(),
            0.5,
            &mut c,
        )
        .unwrap();
        assert_eq!(est.grad[0], 0.0);
        assert!(cge_estimate(&f, &[1.0, 1.0], &ones(2), &Batch::unit(), 0.0, &mut c).is_err());
    }

    #[test]
    fn scale_aware_step() {
        let mask = Mask::from_bits(vec![true, true, false, false]);
        let delta = StepSize::ScaleAware.resolve(&[3.0, 4.0, 100.0, 100.0], &mask);
        assert!((delta - 1e-3 * (1.0 + 5.0 / 2f64.sqrt())).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_config() {
        let q = Quadratic::identity(2);
        let mut c = StepCounters::default();
        let bad = RgeConfig {
            m: 0,
            ..Default::default()
        };
        assert!(rge_estimate(&q, &[0.0; 2], &ones(2), &Batch::unit(), &bad, 0, &mut c).is_err());
        let bad = RgeConfig {
            delta: StepSize::Fixed(-1.0),
            ..Default::default()
        };
        assert!(rge_estimate(&q, &[0.0; 2], &ones(2), &Batch::unit(), &bad, 0, &mut c).is_err());
    }
}
