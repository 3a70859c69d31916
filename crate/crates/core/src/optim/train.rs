use rand::seq::SliceRandom;

use super::{step, OptimizerConfig, PerturbBatch, StepCounters, TrainerState};
use crate::diagnostics::{VarianceTrace, VarianceTracker};
use crate::error::{invalid, Error, Result};
use crate::objective::{eval_grad, eval_loss, Dataset, Objective, ParamVector};
use crate::rng::{derive_seed, fingerprint};
use crate::sparsity::{
    magnitude_mask, random_mask, rigl_prune_grow, saliency_mask, set_prune_grow, GrowPruneConfig,
    GrowRule, Mask, SparsitySpec, UpdateInterval,
};

// sub-streams of the run seed
const STREAM_INIT: u64 = 1;
const STREAM_MASK: u64 = 2;
const STREAM_ORDER: u64 = 3;
pub(super) const STREAM_RGE: u64 = 4;
const STREAM_GROW: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskInit {
    Random,
    Magnitude,
    Saliency,
}

impl std::str::FromStr for MaskInit {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(MaskInit::Random),
            "magnitude" => Ok(MaskInit::Magnitude),
            "saliency" => Ok(MaskInit::Saliency),
            other => Err(invalid(format!("unknown mask init `{other}`"))),
        }
    }
}

impl MaskInit {
    pub fn label(&self) -> &'static str {
        match self {
            MaskInit::Random => "random",
            MaskInit::Magnitude => "magnitude",
            MaskInit::Saliency => "saliency",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarianceSettings {
    pub window: usize,
    pub every: usize,
}

impl Default for VarianceSettings {
    fn default() -> Self {
        Self {
            window: 20,
            every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub alpha: f64,
    pub mask_init: MaskInit,
    pub scheduler: Option<GrowPruneConfig>,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub seed: u64,
    pub variance: VarianceSettings,
    /// Starting point; the objective's seeded initializer when absent.
    pub initial_theta: Option<ParamVector>,
}

impl TrainConfig {
    pub fn new(optimizer: OptimizerConfig, alpha: f64, epochs: usize, seed: u64) -> Self {
        Self {
            alpha,
            mask_init: MaskInit::Random,
            scheduler: None,
            optimizer,
            epochs,
            seed,
            variance: VarianceSettings::default(),
            initial_theta: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    /// 1-indexed.
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    /// Minibatch accuracy at the parameters the step started from.
    pub batch_accuracy: Option<f64>,
    pub grad_norm: f64,
    pub grad_fingerprint: u64,
    pub counters: StepCounters,
    pub mask_checksum: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    /// 1-indexed.
    pub epoch: usize,
    pub step: u64,
    /// Full training-set loss at the end of the epoch.
    pub train_loss: f64,
    pub train_acc: Option<f64>,
    pub eval_acc: Option<f64>,
    /// Mean of the variance samples taken during the epoch.
    pub grad_variance: Option<f64>,
    pub counters: StepCounters,
    pub sparsity: f64,
    pub mask_checksum: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingTrace {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub variance: VarianceTrace,
    pub initial_theta: ParamVector,
    pub final_theta: ParamVector,
    pub final_mask: Mask,
    pub counters: StepCounters,
}

impl TrainingTrace {
    /// Evaluation accuracy per epoch, falling back to training accuracy.
    pub fn epoch_accuracies(&self) -> Vec<f64> {
        self.epochs
            .iter()
            .filter_map(|e| e.eval_acc.or(e.train_acc))
            .collect()
    }
}

fn initial_mask(
    obj: &dyn Objective,
    theta: &[f64],
    data: &Dataset,
    cfg: &TrainConfig,
    counters: &mut StepCounters,
) -> Result<Mask> {
    let k = SparsitySpec::new(cfg.alpha, obj.dim())?.k();
    if k == obj.dim() {
        return Ok(Mask::dense(k));
    }
    match cfg.mask_init {
        MaskInit::Random => random_mask(obj.dim(), k, derive_seed(cfg.seed, STREAM_MASK)),
        MaskInit::Magnitude => magnitude_mask(theta, k),
        MaskInit::Saliency => saliency_mask(obj, theta, &data.batches()[0], k, counters),
    }
}

/// Runs `cfg.epochs` passes over `train_set`'s batches.
///
/// Batch order is reshuffled every epoch from the run seed. Mask updates
/// happen after the step that completes each scheduler interval; the RigL
/// rule's dense gradient is charged to the counters. A saliency mask
/// initialization is charged as well. Everything is a pure function of the
/// inputs and `cfg.seed`.
pub fn train(
    obj: &dyn Objective,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainingTrace> {
    train_observed(obj, train_set, eval_set, cfg, &mut |_| {})
}

/// [`train`], calling `observer` with the state after every step and any
/// mask update that follows it.
pub fn train_observed(
    obj: &dyn Objective,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&TrainerState),
) -> Result<TrainingTrace> {
    cfg.optimizer.validate()?;
    let theta0 = match &cfg.initial_theta {
        Some(t) if t.len() != obj.dim() => {
            return Err(invalid("initial parameters do not match the objective"));
        }
        Some(t) => t.clone(),
        None => obj.initial_point(derive_seed(cfg.seed, STREAM_INIT)),
    };
    let mut counters = StepCounters::default();
    let mask = initial_mask(obj, &theta0, train_set, cfg, &mut counters)?;

    let n_batches = train_set.batches().len();
    let horizon = (cfg.epochs * n_batches) as u64;
    let mut state = TrainerState::new(theta0.clone(), mask, cfg.seed)?.with_horizon(horizon);
    state.counters = counters;

    let interval = cfg.scheduler.map(|s| match s.interval {
        UpdateInterval::Steps(n) => n as u64,
        UpdateInterval::Epoch => n_batches as u64,
    });
    let mut tracker = VarianceTracker::new(cfg.variance.window, cfg.variance.every)?;
    let full_train = train_set.full();
    let full_eval = eval_set.map(Dataset::full);

    let mut steps = Vec::with_capacity(horizon as usize);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..n_batches).collect();
    for epoch in 1..=cfg.epochs {
        let mut order_rng = crate::rng::seeded(derive_seed(
            derive_seed(cfg.seed, STREAM_ORDER),
            epoch as u64,
        ));
        order.sort_unstable();
        order.shuffle(&mut order_rng);
        let variance_start = tracker.trace().records.len();

        for (pos, &b) in order.iter().enumerate() {
            let batch = &train_set.batches()[b];
            let perturb = match cfg.optimizer.perturb_batch {
                PerturbBatch::Same => None,
                PerturbBatch::Next => Some(&train_set.batches()[order[(pos + 1) % n_batches]]),
            };
            let batch_accuracy = obj.accuracy(&state.theta, batch);
            let out = step(&mut state, obj, batch, perturb, &cfg.optimizer)?;
            tracker.push(state.step, &out.update_grad, &state.mask)?;

            if let (Some(sched), Some(every)) = (cfg.scheduler.as_ref(), interval) {
                if state.step % every == 0 {
                    update_mask(&mut state, obj, batch, sched, cfg.seed)?;
                }
            }
            observer(&state);

            steps.push(StepRecord {
                step: state.step,
                epoch,
                loss: out.loss,
                batch_accuracy,
                grad_norm: out.update_grad.norm(),
                grad_fingerprint: fingerprint(&out.update_grad),
                counters: state.counters,
                mask_checksum: state.mask.checksum(),
            });
        }

        let train_loss = eval_loss(obj, &state.theta, &full_train)?;
        let fresh = &tracker.trace().records[variance_start..];
        let grad_variance = (!fresh.is_empty())
            .then(|| fresh.iter().map(|r| r.1).sum::<f64>() / fresh.len() as f64);
        epochs.push(EpochRecord {
            epoch,
            step: state.step,
            train_loss,
            train_acc: obj.accuracy(&state.theta, &full_train),
            eval_acc: full_eval
                .as_ref()
                .and_then(|b| obj.accuracy(&state.theta, b)),
            grad_variance,
            counters: state.counters,
            sparsity: state.mask.sparsity(),
            mask_checksum: state.mask.checksum(),
        });
    }

    Ok(TrainingTrace {
        steps,
        epochs,
        variance: tracker.into_trace(),
        initial_theta: theta0,
        final_theta: state.theta,
        final_mask: state.mask,
        counters: state.counters,
    })
}

fn update_mask(
    state: &mut TrainerState,
    obj: &dyn Objective,
    batch: &crate::objective::Batch,
    sched: &GrowPruneConfig,
    seed: u64,
) -> Result<()> {
    let update = match sched.grow_rule {
        GrowRule::Random => {
            let grow_seed = derive_seed(derive_seed(seed, STREAM_GROW), state.step);
            set_prune_grow(&state.theta, &state.mask, sched, grow_seed)?
        }
        GrowRule::GradMagnitude => {
            let dense = eval_grad(obj, &state.theta, batch, &mut state.counters)?;
            rigl_prune_grow(&state.theta, &state.mask, &dense, sched)?
        }
    };
    state.mask = update.mask;
    state.mask.apply_in_place(&mut state.theta);
    for j in update.grown {
        state.theta[j] = 0.0;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objective::{
        make_synthetic_dataset, Activation, Batch, DatasetKind, Mlp, Quadratic,
    };
    use crate::optim::{Schedule, Variant};

    fn quad_data() -> Dataset {
        Dataset::new(vec![Batch::unit()], 0).unwrap()
    }

    #[test]
    fn zero_epochs_leaves_theta_untouched() {
        let q = Quadratic::identity(4);
        let mut cfg = TrainConfig::new(OptimizerConfig::new(Variant::Sgd), 0.0, 0, 3);
        cfg.initial_theta = Some(vec![1.0, 2.0, 3.0, 4.0].into());
        let trace = train(&q, &quad_data(), None, &cfg).unwrap();
        assert!(trace.steps.is_empty() && trace.epochs.is_empty());
        assert_eq!(trace.final_theta.as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn sgd_contracts_identity_quadratic() {
        let q = Quadratic::identity(20);
        let mut opt = OptimizerConfig::new(Variant::Sgd);
        opt.lr = Schedule::Constant(0.1);
        opt.weight_decay = 0.0;
        let cfg = TrainConfig::new(opt, 0.0, 200, 9);
        let trace = train(&q, &quad_data(), None, &cfg).unwrap();
        let bound = 0.9f64.powi(200) * trace.initial_theta.norm() + 1e-9;
        assert!(trace.final_theta.norm() <= bound);
        assert_eq!(trace.steps.len(), 200);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let data = make_synthetic_dataset(DatasetKind::GaussianBlobs, 120, 2, 2, 4).unwrap();
        let (tr, ev) = data.split(0.2, 4).unwrap();
        let tr = tr.rebatch(16).unwrap();
        let mlp = Mlp::new(vec![2, 8, 2], Activation::Tanh).unwrap();
        let mut opt = OptimizerConfig::new(Variant::ZoSam);
        opt.rge.m = 4;
        let mut cfg = TrainConfig::new(opt, 0.5, 3, 21);
        cfg.scheduler =
            Some(GrowPruneConfig::new(0.3, UpdateInterval::Epoch, GrowRule::Random).unwrap());
        let a = train(&mlp, &tr, Some(&ev), &cfg).unwrap();
        let b = train(&mlp, &tr, Some(&ev), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.epochs.len(), 3);
        assert!(a.epochs.iter().all(|e| e.eval_acc.is_some()));
    }

    #[test]
    fn rigl_and_saliency_costs_are_charged() {
        let data = make_synthetic_dataset(DatasetKind::GaussianBlobs, 64, 2, 2, 4)
            .unwrap()
            .rebatch(16)
            .unwrap();
        let mlp = Mlp::new(vec![2, 6, 2], Activation::Tanh).unwrap();
        let mut cfg = TrainConfig::new(OptimizerConfig::new(Variant::Sgd), 0.5, 2, 0);
        cfg.mask_init = MaskInit::Saliency;
        cfg.scheduler = Some(
            GrowPruneConfig::new(0.2, UpdateInterval::Epoch, GrowRule::GradMagnitude).unwrap(),
        );
        let t = train(&mlp, &data, None, &cfg).unwrap();
        // 8 steps + 1 saliency pass + 2 RigL updates
        assert_eq!(t.counters.backward_passes, 11);
        assert_eq!(
            t.final_mask.count_active(),
            SparsitySpec::new(0.5, mlp.dim()).unwrap().k()
        );
    }
}
