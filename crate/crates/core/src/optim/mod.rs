//! SGD, SAM and ZO-SAM on masked parameters.
//!
//! All three variants share the same skeleton: mask the parameters, pick an
//! evaluation point, take one first-order gradient there, and apply a
//! weight-decayed step that is masked again. They differ only in how the
//! evaluation point is chosen:
//!
//! | variant | evaluation point            | per-step cost (backward, forward) |
//! |---------|-----------------------------|-----------------------------------|
//! | SGD     | `theta`                     | (1, 1)                            |
//! | SAM     | `theta + rho g / ||g||`     | (2, 2)                            |
//! | ZO-SAM  | `theta + rho ĝ / ||ĝ||`     | (1, 2m + 1)                       |
//!
//! where `g` is a backpropagated gradient and `ĝ` a random-direction
//! estimate. A zero radius skips the perturbation stage entirely, so SAM
//! and ZO-SAM then coincide with SGD, counters included.

mod train;

use std::ops::AddAssign;

use crate::error::{invalid, Error, Result};
use crate::objective::{eval_loss_grad, norm, Batch, Objective, ParamVector};
use crate::rng::derive_seed;
use crate::sparsity::Mask;
use crate::zo::{rge_estimate, RgeConfig};

pub use train::{
    train, train_observed, EpochRecord, MaskInit, StepRecord, TrainConfig, TrainingTrace,
    VarianceSettings,
};

/// Gradient norms below this are treated as zero and skip the perturbation.
pub const DEGENERATE_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct StepCounters {
    pub forward_evals: u64,
    pub backward_passes: u64,
}

impl AddAssign for StepCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.forward_evals += rhs.forward_evals;
        self.backward_passes += rhs.backward_passes;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Sgd,
    Sam,
    ZoSam,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::Sgd => "sgd",
            Variant::Sam => "sam",
            Variant::ZoSam => "zosam",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Variant::Sgd),
            "sam" => Ok(Variant::Sam),
            "zosam" | "zo-sam" => Ok(Variant::ZoSam),
            other => Err(invalid(format!("unknown optimizer `{other}`"))),
        }
    }
}

/// Per-step scalar schedule over a run of `horizon` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    Constant(f64),
    /// `floor + (peak - floor) (1 + cos(pi t / horizon)) / 2`.
    Cosine {
        peak: f64,
        floor: f64,
    },
}

impl Schedule {
    pub fn at(&self, t: u64, horizon: u64) -> f64 {
        match *self {
            Schedule::Constant(v) => v,
            Schedule::Cosine { peak, floor } => {
                if horizon == 0 {
                    return peak;
                }
                let frac = (t.min(horizon) as f64) / horizon as f64;
                floor + (peak - floor) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    fn validate(&self, what: &str) -> Result<()> {
        let ok = match *self {
            Schedule::Constant(v) => v >= 0.0 && v.is_finite(),
            Schedule::Cosine { peak, floor } => floor >= 0.0 && peak >= floor && peak.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("{what} schedule {self:?} is invalid")))
        }
    }
}

/// Which batch feeds the perturbation gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PerturbBatch {
    /// The update batch.
    #[default]
    Same,
    /// The batch that follows the update batch in the epoch order.
    Next,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub variant: Variant,
    pub lr: Schedule,
    pub rho: Schedule,
    pub weight_decay: f64,
    pub rge: RgeConfig,
    pub perturb_batch: PerturbBatch,
}

impl OptimizerConfig {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            lr: Schedule::Cosine {
                peak: 0.1,
                floor: 0.0,
            },
            rho: Schedule::Constant(0.05),
            weight_decay: 5e-4,
            rge: RgeConfig::default(),
            perturb_batch: PerturbBatch::Same,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lr.validate("learning-rate")?;
        self.rho.validate("perturbation-radius")?;
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid(format!(
                "weight decay {} must be >= 0",
                self.weight_decay
            )));
        }
        self.rge.validate()
    }
}

/// Mutable state of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub theta: ParamVector,
    pub mask: Mask,
    pub step: u64,
    /// Total steps in the run, used by the schedules.
    pub horizon: u64,
    pub counters: StepCounters,
    pub seed: u64,
}

impl TrainerState {
    pub fn new(mut theta: ParamVector, mask: Mask, seed: u64) -> Result<Self> {
        if theta.len() != mask.len() {
            return Err(invalid("parameter and mask lengths differ"));
        }
        mask.apply_in_place(&mut theta);
        Ok(Self {
            theta,
            mask,
            step: 0,
            horizon: 0,
            counters: StepCounters::default(),
            seed,
        })
    }

    pub fn with_horizon(mut self, horizon: u64) -> Self {
        self.horizon = horizon;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    /// Loss at the point where the update gradient was taken.
    pub loss: f64,
    pub update_grad: ParamVector,
    pub perturbation: ParamVector,
}

/// `rho g / ||g||`, or zero when `||g|| < 1e-12`.
pub fn sam_perturb(grad: &[f64], rho: f64) -> ParamVector {
    let n = norm(grad);
    if n < DEGENERATE_NORM {
        return ParamVector::zeros(grad.len());
    }
    grad.iter().map(|g| rho * g / n).collect()
}

/// Seed of the random directions used at `step` of a run seeded `seed`.
pub fn rge_step_seed(seed: u64, step: u64) -> u64 {
    derive_seed(derive_seed(seed, train::STREAM_RGE), step)
}

/// One step of `cfg.variant`. `perturb_batch` overrides the batch used for
/// the perturbation gradient.
pub fn step(
    state: &mut TrainerState,
    obj: &dyn Objective,
    batch: &Batch,
    perturb_batch: Option<&Batch>,
    cfg: &OptimizerConfig,
) -> Result<StepOutcome> {
    if state.theta.len() != obj.dim() || state.mask.len() != obj.dim() {
        return Err(invalid("trainer state does not match objective dimension"));
    }
    let t = state.step;
    let eta = cfg.lr.at(t, state.horizon);
    let rho = cfg.rho.at(t, state.horizon);
    let pbatch = perturb_batch.unwrap_or(batch);

    state.mask.apply_in_place(&mut state.theta);
    let theta = &state.theta;

    let perturbation = match cfg.variant {
        _ if rho == 0.0 => ParamVector::zeros(theta.len()),
        Variant::Sgd => ParamVector::zeros(theta.len()),
        Variant::Sam => {
            let (_, g) = eval_loss_grad(obj, theta, pbatch, &mut state.counters)?;
            sam_perturb(&g, rho)
        }
        Variant::ZoSam => {
            let est = rge_estimate(
                obj,
                theta,
                &state.mask,
                pbatch,
                &cfg.rge,
                rge_step_seed(state.seed, t),
                &mut state.counters,
            )?;
            sam_perturb(&est.grad, rho)
        }
    };

    let perturbed = state.mask.masked_sum(theta, &perturbation, 1.0);
    let (loss, g) = eval_loss_grad(obj, &perturbed, batch, &mut state.counters)?;

    let lambda = cfg.weight_decay;
    let mut next: Vec<f64> = theta
        .iter()
        .zip(g.iter())
        .map(|(th, gj)| th - eta * (gj + lambda * th))
        .collect();
    state.mask.apply_in_place(&mut next);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericOverflow(format!(
            "parameters diverged at step {t}"
        )));
    }
    state.theta = next.into();
    state.step += 1;
    Ok(StepOutcome {
        loss,
        update_grad: g,
        perturbation,
    })
}

fn expect_variant(cfg: &OptimizerConfig, want: Variant) -> Result<()> {
    if cfg.variant != want {
        return Err(invalid(format!(
            "{} step called with a {} config",
            want.label(),
            cfg.variant.label()
        )));
    }
    Ok(())
}

pub fn sgd_step(
    state: &mut TrainerState,
    obj: &dyn Objective,
    batch: &Batch,
    cfg: &OptimizerConfig,
) -> Result<StepOutcome> {
    expect_variant(cfg, Variant::Sgd)?;
    step(state, obj, batch, None, cfg)
}

pub fn sam_step(
    state: &mut TrainerState,
    obj: &dyn Objective,
    batch: &Batch,
    cfg: &OptimizerConfig,
) -> Result<StepOutcome> {
    expect_variant(cfg, Variant::Sam)?;
    step(state, obj, batch, None, cfg)
}

pub fn zosam_step(
    state: &mut TrainerState,
    obj: &dyn Objective,
    batch: &Batch,
    cfg: &OptimizerConfig,
) -> Result<StepOutcome> {
    expect_variant(cfg, Variant::ZoSam)?;
    step(state, obj, batch, None, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{FnObjective, Quadratic};
    use crate::zo::StepSize;

    fn cfg(variant: Variant, lr: f64, rho: f64, wd: f64) -> OptimizerConfig {
        OptimizerConfig {
            lr: Schedule::Constant(lr),
            rho: Schedule::Constant(rho),
            weight_decay: wd,
            ..OptimizerConfig::new(variant)
        }
    }

    fn state(theta: Vec<f64>, mask: Mask) -> TrainerState {
        TrainerState::new(theta.into(), mask, 0).unwrap()
    }

    #[test]
    fn perturb_examples() {
        let e = sam_perturb(&[3.0, 4.0], 0.1);
        assert!((e[0] - 0.06).abs() < 1e-15 && (e[1] - 0.08).abs() < 1e-15);
        assert_eq!(sam_perturb(&[0.0, 0.0], 0.3).as_slice(), &[0.0, 0.0]);
        assert!((sam_perturb(&[1.0, -7.0, 2.5], 0.05).norm() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn sgd_examples() {
        let q = Quadratic::identity(1);
        let mut s = state(vec![1.0], Mask::dense(1));
        sgd_step(
            &mut s,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sgd, 0.1, 0.0, 0.0),
        )
        .unwrap();
        assert!((s.theta[0] - 0.9).abs() < 1e-15);
        assert_eq!(
            s.counters,
            StepCounters {
                forward_evals: 1,
                backward_passes: 1
            }
        );

        let flat = FnObjective::constant(1, 0.0);
        let mut s = state(vec![1.0], Mask::dense(1));
        sgd_step(
            &mut s,
            &flat,
            &Batch::unit(),
            &cfg(Variant::Sgd, 0.1, 0.0, 0.1),
        )
        .unwrap();
        assert!((s.theta[0] - 0.99).abs() < 1e-15);

        let q = Quadratic::identity(3);
        let mut s = state(
            vec![1.0, 2.0, 3.0],
            Mask::from_bits(vec![true, false, true]),
        );
        sgd_step(
            &mut s,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sgd, 0.1, 0.0, 0.0),
        )
        .unwrap();
        assert_eq!(s.theta[1], 0.0);
    }

    #[test]
    fn sam_hand_example() {
        let q = Quadratic::identity(1);
        let mut s = state(vec![1.0], Mask::dense(1));
        let out = sam_step(
            &mut s,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sam, 0.1, 0.1, 0.0),
        )
        .unwrap();
        assert!((out.perturbation[0] - 0.1).abs() < 1e-15);
        assert!((s.theta[0] - 0.89).abs() < 1e-15);
        assert_eq!(
            s.counters,
            StepCounters {
                forward_evals: 2,
                backward_passes: 2
            }
        );
    }

    #[test]
    fn zero_radius_reduces_to_sgd() {
        let q = Quadratic::diagonal(&[1.0, 3.0], vec![0.5, -1.0]).unwrap();
        let mut reference = state(vec![1.0, -2.0], Mask::dense(2));
        sgd_step(
            &mut reference,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sgd, 0.1, 0.0, 1e-3),
        )
        .unwrap();
        for v in [Variant::Sam, Variant::ZoSam] {
            let mut s = state(vec![1.0, -2.0], Mask::dense(2));
            step(&mut s, &q, &Batch::unit(), None, &cfg(v, 0.1, 0.0, 1e-3)).unwrap();
            assert_eq!(s, reference);
        }
    }

    #[test]
    fn sam_counts_over_ten_steps() {
        let q = Quadratic::identity(2);
        let mut s = state(vec![1.0, 1.0], Mask::dense(2));
        let c = cfg(Variant::Sam, 0.1, 0.05, 0.0);
        for _ in 0..10 {
            sam_step(&mut s, &q, &Batch::unit(), &c).unwrap();
        }
        assert_eq!(s.counters.backward_passes, 20);
    }

    #[test]
    fn zosam_cost_contract() {
        let q = Quadratic::identity(5);
        let mut s = state(vec![1.0; 5], Mask::dense(5));
        let mut c = cfg(Variant::ZoSam, 0.1, 0.05, 0.0);
        c.rge.m = 8;
        zosam_step(&mut s, &q, &Batch::unit(), &c).unwrap();
        assert_eq!(
            s.counters,
            StepCounters {
                forward_evals: 17,
                backward_passes: 1
            }
        );
    }

    #[test]
    fn zosam_matches_sam_on_one_dimensional_quadratic() {
        // With d = 1 any direction u gives ĝ = (u^2) theta, which normalizes
        // to the exact SAM direction; the central difference is exact here.
        let q = Quadratic::identity(1);
        let mut sam = state(vec![1.0], Mask::dense(1));
        sam_step(
            &mut sam,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sam, 0.1, 0.1, 0.0),
        )
        .unwrap();

        let mut zo = state(vec![1.0], Mask::dense(1));
        let mut c = cfg(Variant::ZoSam, 0.1, 0.1, 0.0);
        c.rge.m = 1;
        c.rge.delta = StepSize::Fixed(0.01);
        zosam_step(&mut zo, &q, &Batch::unit(), &c).unwrap();
        assert!((zo.theta[0] - sam.theta[0]).abs() < 1e-15);
        assert!((zo.theta[0] - 0.89).abs() < 1e-15);
    }

    #[test]
    fn pruned_coordinates_do_not_influence_the_step() {
        let q = Quadratic::new(
            vec![2.0, 0.5, 0.0, 0.5, 1.0, 0.3, 0.0, 0.3, 1.5],
            vec![0.1, 0.2, 0.3],
        )
        .unwrap();
        let mask = Mask::from_bits(vec![true, false, true]);
        for v in [Variant::Sgd, Variant::Sam, Variant::ZoSam] {
            let c = cfg(v, 0.05, 0.05, 0.1);
            let mut a = TrainerState {
                theta: vec![1.0, 0.0, -1.0].into(),
                ..state(vec![0.0; 3], mask.clone())
            };
            let mut b = TrainerState {
                theta: vec![1.0, 123.0, -1.0].into(),
                ..state(vec![0.0; 3], mask.clone())
            };
            step(&mut a, &q, &Batch::unit(), None, &c).unwrap();
            step(&mut b, &q, &Batch::unit(), None, &c).unwrap();
            assert_eq!(a.theta, b.theta);
        }
    }

    #[test]
    fn wrong_variant_is_rejected() {
        let q = Quadratic::identity(1);
        let mut s = state(vec![1.0], Mask::dense(1));
        assert!(sam_step(
            &mut s,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sgd, 0.1, 0.1, 0.0)
        )
        .is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        let s = Schedule::Cosine {
            peak: 0.1,
            floor: 0.0,
        };
        assert_eq!(s.at(0, 100), 0.1);
        assert!(s.at(100, 100).abs() < 1e-17);
        assert!((s.at(50, 100) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn divergence_is_reported() {
        let q = Quadratic::identity(1);
        let mut s = state(vec![1e300], Mask::dense(1));
        let err = sgd_step(
            &mut s,
            &q,
            &Batch::unit(),
            &cfg(Variant::Sgd, 0.1, 0.0, 0.0),
        )
        .unwrap_err();
        assert!(matches!(err, Error::NumericOverflow(_)));
    }
}
