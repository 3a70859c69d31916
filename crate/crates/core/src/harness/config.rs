use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::diagnostics::{SliceNorm, SliceParams};
use crate::error::{Error, Result};
use crate::objective::{
    Activation, Builtin, DatasetKind, LogisticRegression, Mlp, Quadratic, Rosenbrock,
};
use crate::optim::{MaskInit, OptimizerConfig, PerturbBatch, Schedule, VarianceSettings, Variant};
use crate::sparsity::{GrowPruneConfig, GrowRule, UpdateInterval};
use crate::zo::{RgeConfig, StepSize};

#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveSpec {
    Mlp {
        layers: Vec<usize>,
        activation: Activation,
    },
    Quadratic {
        diag: Vec<f64>,
        linear: Vec<f64>,
    },
    Rosenbrock {
        dim: usize,
    },
    Logistic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n_samples: usize,
    pub in_dim: usize,
    pub n_classes: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrShape {
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub objective: ObjectiveSpec,
    pub dataset: DatasetSpec,
    pub batch_size: usize,
    pub eval_fraction: f64,
    pub alpha: f64,
    pub mask_init: MaskInit,
    pub scheduler: Option<GrowPruneConfig>,
    pub variants: Vec<Variant>,
    pub lr: f64,
    pub lr_shape: LrShape,
    pub lr_floor: f64,
    pub rho: f64,
    pub weight_decay: f64,
    pub rge: RgeConfig,
    pub perturb_batch: PerturbBatch,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub variance: VarianceSettings,
    pub slice: SliceParams,
    /// Write loss slices alongside the metrics during `run`.
    pub slice_on_run: bool,
    pub acc_threshold: f64,
}

const REQUIRED: [&str; 2] = ["objective", "epochs"];

/// Every accepted key.
const KEYS: [&str; 39] = [
    "objective",
    "layers",
    "activation",
    "quadratic_diag",
    "quadratic_b",
    "rosenbrock_dim",
    "dataset",
    "n_samples",
    "in_dim",
    "n_classes",
    "data_seed",
    "batch_size",
    "eval_fraction",
    "alpha",
    "mask_init",
    "scheduler",
    "zeta",
    "mask_interval",
    "optimizers",
    "lr",
    "lr_schedule",
    "lr_floor",
    "rho",
    "weight_decay",
    "rge_m",
    "rge_delta",
    "rge_restrict",
    "perturb_batch",
    "epochs",
    "seeds",
    "variance_window",
    "variance_every",
    "slice",
    "slice_dirs",
    "slice_radius",
    "slice_grid",
    "slice_seed",
    "slice_norm",
    "acc_threshold",
];

struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn raw(&self, key: &str) -> Option<&(usize, String)> {
        self.values.get(key)
    }

    fn err(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.raw(key).map_or(0, |r| r.0),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.raw(key) {
            None => Ok(default),
            Some((_, v)) => v
                .parse()
                .map_err(|_| self.err(key, format!("cannot parse `{v}`"))),
        }
    }

    fn list<T: FromStr>(&self, key: &str, default: &str) -> Result<Vec<T>> {
        let text = self.raw(key).map_or(default, |r| r.1.as_str());
        text.split(',')
            .map(|s| s.trim())
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|_| self.err(key, format!("cannot parse list item `{s}`")))
            })
            .collect()
    }

    fn choice<T>(&self, key: &str, default: &str, options: &[(&str, T)]) -> Result<T>
    where
        T: Clone,
    {
        let v = self.raw(key).map_or(default, |r| r.1.as_str());
        options
            .iter()
            .find(|(name, _)| *name == v)
            .map(|(_, t)| t.clone())
            .ok_or_else(|| {
                let names: Vec<&str> = options.iter().map(|o| o.0).collect();
                self.err(key, format!("`{v}` is not one of {}", names.join("|")))
            })
    }

    fn check(&self, key: &str, ok: bool, message: &str) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.err(key, message))
        }
    }
}

fn fmt_list<T: ToString>(v: &[T]) -> String {
    v.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl ExperimentConfig {
    /// Parses `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
                line,
                key: content.to_string(),
                message: "expected `key=value`".into(),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(Error::Config {
                    line,
                    key: key.to_string(),
                    message: "unknown key".into(),
                });
            }
            if values
                .insert(key.to_string(), (line, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::Config {
                    line,
                    key: key.to_string(),
                    message: "duplicate key".into(),
                });
            }
        }
        let e = Entries { values };
        for key in REQUIRED {
            if e.raw(key).is_none() {
                return Err(e.err(key, "missing required key"));
            }
        }

        let objective = match e.choice(
            "objective",
            "",
            &[
                ("mlp", 0),
                ("quadratic", 1),
                ("rosenbrock", 2),
                ("logistic", 3),
            ],
        )? {
            0 => {
                let layers: Vec<usize> = e.list("layers", "2,16,2")?;
                e.check(
                    "layers",
                    layers.len() >= 2 && layers.iter().all(|&w| w > 0),
                    "need >= 2 positive widths",
                )?;
                let activation = e.choice(
                    "activation",
                    "tanh",
                    &[("tanh", Activation::Tanh), ("relu", Activation::Relu)],
                )?;
                ObjectiveSpec::Mlp { layers, activation }
            }
            1 => {
                let diag: Vec<f64> = e.list("quadratic_diag", "1,1")?;
                e.check(
                    "quadratic_diag",
                    !diag.is_empty() && diag.iter().all(|v| *v > 0.0),
                    "diagonal must be positive",
                )?;
                let zeros = vec!["0"; diag.len()].join(",");
                let linear: Vec<f64> = e.list("quadratic_b", &zeros)?;
                e.check(
                    "quadratic_b",
                    linear.len() == diag.len(),
                    "length must match quadratic_diag",
                )?;
                ObjectiveSpec::Quadratic { diag, linear }
            }
            2 => {
                let dim = e.get("rosenbrock_dim", 2usize)?;
                e.check("rosenbrock_dim", dim >= 2, "must be >= 2")?;
                ObjectiveSpec::Rosenbrock { dim }
            }
            _ => ObjectiveSpec::Logistic,
        };

        let dataset = DatasetSpec {
            kind: e.choice(
                "dataset",
                "blobs",
                &[
                    ("blobs", DatasetKind::GaussianBlobs),
                    ("arcs", DatasetKind::TwoArcs),
                ],
            )?,
            n_samples: e.get("n_samples", 1000usize)?,
            in_dim: e.get("in_dim", 2usize)?,
            n_classes: e.get("n_classes", 2usize)?,
            seed: e.get("data_seed", 0u64)?,
        };
        e.check("n_classes", dataset.n_classes >= 2, "must be >= 2")?;
        e.check(
            "n_samples",
            dataset.n_samples >= 2 * dataset.n_classes,
            "too few samples",
        )?;
        e.check("in_dim", dataset.in_dim >= 1, "must be >= 1")?;
        match &objective {
            ObjectiveSpec::Mlp { layers, .. } => {
                e.check(
                    "layers",
                    layers[0] == dataset.in_dim,
                    "first width must equal in_dim",
                )?;
                e.check(
                    "layers",
                    *layers.last().unwrap() == dataset.n_classes,
                    "last width must equal n_classes",
                )?;
            }
            ObjectiveSpec::Logistic => e.check(
                "n_classes",
                dataset.n_classes == 2,
                "logistic needs 2 classes",
            )?,
            _ => {}
        }

        let batch_size = e.get("batch_size", 64usize)?;
        e.check("batch_size", batch_size >= 1, "must be >= 1")?;
        let eval_fraction = e.get("eval_fraction", 0.2f64)?;
        e.check(
            "eval_fraction",
            eval_fraction > 0.0 && eval_fraction < 1.0,
            "must be in (0, 1)",
        )?;
        let alpha = e.get("alpha", 0.9f64)?;
        e.check("alpha", (0.0..1.0).contains(&alpha), "must be in [0, 1)")?;
        let mask_init = e.get("mask_init", MaskInit::Random)?;

        let rule = e.choice(
            "scheduler",
            "none",
            &[
                ("none", None),
                ("set", Some(GrowRule::Random)),
                ("rigl", Some(GrowRule::GradMagnitude)),
            ],
        )?;
        let zeta = e.get("zeta", 0.3f64)?;
        e.check("zeta", zeta > 0.0 && zeta < 1.0, "must be in (0, 1)")?;
        let interval = match e.raw("mask_interval").map(|r| r.1.as_str()) {
            None | Some("epoch") => UpdateInterval::Epoch,
            Some(_) => {
                let n = e.get("mask_interval", 0usize)?;
                e.check("mask_interval", n >= 1, "must be `epoch` or >= 1")?;
                UpdateInterval::Steps(n)
            }
        };
        let scheduler = rule.map(|r| GrowPruneConfig {
            zeta,
            interval,
            grow_rule: r,
        });

        let variants: Vec<Variant> = e.list("optimizers", "sgd,sam,zosam")?;
        e.check(
            "optimizers",
            !variants.is_empty(),
            "need at least one optimizer",
        )?;
        let mut dedup = variants.clone();
        dedup.sort_by_key(|v| v.label());
        dedup.dedup();
        e.check(
            "optimizers",
            dedup.len() == variants.len(),
            "optimizer listed twice",
        )?;

        let lr = e.get("lr", 0.1f64)?;
        e.check("lr", lr > 0.0 && lr.is_finite(), "must be > 0")?;
        let lr_shape = e.choice(
            "lr_schedule",
            "cosine",
            &[("cosine", LrShape::Cosine), ("constant", LrShape::Constant)],
        )?;
        let lr_floor = e.get("lr_floor", 0.0f64)?;
        e.check(
            "lr_floor",
            lr_floor >= 0.0 && lr_floor <= lr,
            "must be in [0, lr]",
        )?;
        let rho = e.get("rho", 0.05f64)?;
        e.check("rho", rho >= 0.0 && rho.is_finite(), "must be >= 0")?;
        let weight_decay = e.get("weight_decay", 5e-4f64)?;
        e.check(
            "weight_decay",
            weight_decay >= 0.0 && weight_decay.is_finite(),
            "must be >= 0",
        )?;

        let m = e.get("rge_m", 16usize)?;
        e.check("rge_m", m >= 1, "must be >= 1")?;
        let delta = match e.raw("rge_delta").map(|r| r.1.as_str()) {
            None | Some("auto") => StepSize::ScaleAware,
            Some(_) => {
                let d = e.get("rge_delta", 0.0f64)?;
                e.check(
                    "rge_delta",
                    d > 0.0 && d.is_finite(),
                    "must be `auto` or > 0",
                )?;
                StepSize::Fixed(d)
            }
        };
        let rge = RgeConfig {
            m,
            delta,
            restrict_to_support: e.get("rge_restrict", false)?,
        };
        let perturb_batch = e.choice(
            "perturb_batch",
            "same",
            &[("same", PerturbBatch::Same), ("next", PerturbBatch::Next)],
        )?;

        let epochs = e.get("epochs", 0usize)?;
        let seeds: Vec<u64> = e.list("seeds", "0,1,2,3,4")?;
        e.check("seeds", !seeds.is_empty(), "need at least one seed")?;
        let variance = VarianceSettings {
            window: e.get("variance_window", 20usize)?,
            every: e.get("variance_every", 10usize)?,
        };
        e.check("variance_window", variance.window >= 2, "must be >= 2")?;
        e.check("variance_every", variance.every >= 1, "must be >= 1")?;

        let slice = SliceParams {
            n_dirs: e.get("slice_dirs", 1usize)?,
            radius: e.get("slice_radius", 1.0f64)?,
            n_grid: e.get("slice_grid", 21usize)?,
            seed: e.get("slice_seed", 0u64)?,
            normalization: e.get("slice_norm", SliceNorm::Global)?,
        };
        e.check(
            "slice_dirs",
            (1..=2).contains(&slice.n_dirs),
            "must be 1 or 2",
        )?;
        e.check(
            "slice_radius",
            slice.radius > 0.0 && slice.radius.is_finite(),
            "must be > 0",
        )?;
        e.check("slice_grid", slice.n_grid % 2 == 1, "must be odd")?;
        let slice_on_run = e.get("slice", false)?;
        let acc_threshold = e.get("acc_threshold", 0.9f64)?;
        e.check(
            "acc_threshold",
            (0.0..=1.0).contains(&acc_threshold),
            "must be in [0, 1]",
        )?;

        Ok(Self {
            objective,
            dataset,
            batch_size,
            eval_fraction,
            alpha,
            mask_init,
            scheduler,
            variants,
            lr,
            lr_shape,
            lr_floor,
            rho,
            weight_decay,
            rge,
            perturb_batch,
            epochs,
            seeds,
            variance,
            slice,
            slice_on_run,
            acc_threshold,
        })
    }

    /// Canonical `key=value` form with every key spelled out; parsing it
    /// yields an equal config.
    pub fn to_text(&self) -> String {
        let mut kv: Vec<(&str, String)> = Vec::new();
        match &self.objective {
            ObjectiveSpec::Mlp { layers, activation } => {
                kv.push(("objective", "mlp".into()));
                kv.push(("layers", fmt_list(layers)));
                let act = match activation {
                    Activation::Tanh => "tanh",
                    Activation::Relu => "relu",
                };
                kv.push(("activation", act.into()));
            }
            ObjectiveSpec::Quadratic { diag, linear } => {
                kv.push(("objective", "quadratic".into()));
                kv.push(("quadratic_diag", fmt_list(diag)));
                kv.push(("quadratic_b", fmt_list(linear)));
            }
            ObjectiveSpec::Rosenbrock { dim } => {
                kv.push(("objective", "rosenbrock".into()));
                kv.push(("rosenbrock_dim", dim.to_string()));
            }
            ObjectiveSpec::Logistic => kv.push(("objective", "logistic".into())),
        }
        let d = &self.dataset;
        let kind = match d.kind {
            DatasetKind::GaussianBlobs => "blobs",
            DatasetKind::TwoArcs => "arcs",
        };
        kv.push(("dataset", kind.into()));
        kv.push(("n_samples", d.n_samples.to_string()));
        kv.push(("in_dim", d.in_dim.to_string()));
        kv.push(("n_classes", d.n_classes.to_string()));
        kv.push(("data_seed", d.seed.to_string()));
        kv.push(("batch_size", self.batch_size.to_string()));
        kv.push(("eval_fraction", self.eval_fraction.to_string()));
        kv.push(("alpha", self.alpha.to_string()));
        kv.push(("mask_init", self.mask_init.label().into()));
        match &self.scheduler {
            None => kv.push(("scheduler", "none".into())),
            Some(s) => {
                let rule = match s.grow_rule {
                    GrowRule::Random => "set",
                    GrowRule::GradMagnitude => "rigl",
                };
                kv.push(("scheduler", rule.into()));
                kv.push(("zeta", s.zeta.to_string()));
                let interval = match s.interval {
                    UpdateInterval::Epoch => "epoch".to_string(),
                    UpdateInterval::Steps(n) => n.to_string(),
                };
                kv.push(("mask_interval", interval));
            }
        }
        kv.push((
            "optimizers",
            self.variants
                .iter()
                .map(Variant::label)
                .collect::<Vec<_>>()
                .join(","),
        ));
        kv.push(("lr", self.lr.to_string()));
        let shape = match self.lr_shape {
            LrShape::Constant => "constant",
            LrShape::Cosine => "cosine",
        };
        kv.push(("lr_schedule", shape.into()));
        kv.push(("lr_floor", self.lr_floor.to_string()));
        kv.push(("rho", self.rho.to_string()));
        kv.push(("weight_decay", self.weight_decay.to_string()));
        kv.push(("rge_m", self.rge.m.to_string()));
        let delta = match self.rge.delta {
            StepSize::ScaleAware => "auto".to_string(),
            StepSize::Fixed(d) => d.to_string(),
        };
        kv.push(("rge_delta", delta));
        kv.push(("rge_restrict", self.rge.restrict_to_support.to_string()));
        let pb = match self.perturb_batch {
            PerturbBatch::Same => "same",
            PerturbBatch::Next => "next",
        };
        kv.push(("perturb_batch", pb.into()));
        kv.push(("epochs", self.epochs.to_string()));
        kv.push(("seeds", fmt_list(&self.seeds)));
        kv.push(("variance_window", self.variance.window.to_string()));
        kv.push(("variance_every", self.variance.every.to_string()));
        kv.push(("slice", self.slice_on_run.to_string()));
        kv.push(("slice_dirs", self.slice.n_dirs.to_string()));
        kv.push(("slice_radius", self.slice.radius.to_string()));
        kv.push(("slice_grid", self.slice.n_grid.to_string()));
        kv.push(("slice_seed", self.slice.seed.to_string()));
        kv.push(("slice_norm", self.slice.normalization.label().into()));
        kv.push(("acc_threshold", self.acc_threshold.to_string()));

        let mut out = String::new();
        for (k, v) in kv {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }

    pub fn build_objective(&self) -> Result<Builtin> {
        Ok(match &self.objective {
            ObjectiveSpec::Mlp { layers, activation } => {
                Builtin::Mlp(Mlp::new(layers.clone(), *activation)?)
            }
            ObjectiveSpec::Quadratic { diag, linear } => {
                Builtin::Quadratic(Quadratic::diagonal(diag, linear.clone())?)
            }
            ObjectiveSpec::Rosenbrock { dim } => Builtin::Rosenbrock(Rosenbrock::new(*dim)?),
            ObjectiveSpec::Logistic => {
                Builtin::LogisticRegression(LogisticRegression::new(self.dataset.in_dim)?)
            }
        })
    }

    pub fn optimizer(&self, variant: Variant) -> OptimizerConfig {
        let lr = match self.lr_shape {
            LrShape::Constant => Schedule::Constant(self.lr),
            LrShape::Cosine => Schedule::Cosine {
                peak: self.lr,
                floor: self.lr_floor,
            },
        };
        OptimizerConfig {
            variant,
            lr,
            rho: Schedule::Constant(self.rho),
            weight_decay: self.weight_decay,
            rge: self.rge,
            perturb_batch: self.perturb_batch,
        }
    }
}

impl FromStr for ExperimentConfig {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "objective=mlp\nepochs=3\n";

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::parse(MINIMAL).unwrap();
        assert_eq!(c.alpha, 0.9);
        assert_eq!(c.rho, 0.05);
        assert_eq!(c.weight_decay, 5e-4);
        assert_eq!(c.rge.m, 16);
        assert_eq!(c.rge.delta, StepSize::ScaleAware);
        assert!(!c.rge.restrict_to_support);
        assert_eq!(c.lr_shape, LrShape::Cosine);
        assert_eq!(c.seeds, vec![0, 1, 2, 3, 4]);
        assert_eq!(
            c.variance,
            VarianceSettings {
                window: 20,
                every: 10
            }
        );
        assert_eq!(c.slice.normalization, SliceNorm::Global);
        assert_eq!(c.scheduler, None);
    }

    #[test]
    fn out_of_range_alpha_names_the_key_and_line() {
        let err = ExperimentConfig::parse("objective=mlp\nepochs=3\nalpha=1.5\n").unwrap_err();
        match err {
            Error::Config { line, key, .. } => {
                assert_eq!(key, "alpha");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_and_missing_keys_are_errors() {
        let err =
            ExperimentConfig::parse("objective=mlp\nepochs=3\nlearning_rate=0.1\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, line: 3, .. } if key == "learning_rate"));
        let err = ExperimentConfig::parse("objective=mlp\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "epochs"));
        let err = ExperimentConfig::parse("objective=mlp\nepochs=3\nepochs=4\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "epochs"));
        let err = ExperimentConfig::parse("objective=mlp\nepochs\n").unwrap_err();
        assert!(matches!(err, Error::Config { line: 2, .. }));
    }

    #[test]
    fn round_trip_is_stable() {
        let text = "objective=mlp\nlayers=2,32,16,2\nepochs=7\nscheduler=rigl\nzeta=0.25\nmask_interval=5\n\
                    optimizers=zosam,sgd\nrge_delta=0.001\nlr_schedule=constant\nrho=0.1\nseeds=3,9\nslice_dirs=2\n";
        let a = ExperimentConfig::parse(text).unwrap();
        let b = ExperimentConfig::parse(&a.to_text()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
        for obj in [
            "quadratic\nquadratic_diag=1,10\nquadratic_b=0.5,-1",
            "rosenbrock\nrosenbrock_dim=3",
            "logistic",
        ] {
            let a = ExperimentConfig::parse(&format!("objective={obj}\nepochs=1\n")).unwrap();
            assert_eq!(ExperimentConfig::parse(&a.to_text()).unwrap(), a);
        }
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let c = ExperimentConfig::parse("# experiment\n\nobjective = mlp  # model\nepochs = 2\n")
            .unwrap();
        assert_eq!(c.epochs, 2);
    }

    #[test]
    fn layer_shape_must_match_data() {
        let err = ExperimentConfig::parse("objective=mlp\nlayers=3,4,2\nepochs=1\n").unwrap_err();
        assert!(matches!(err, Error::Config { ref key, .. } if key == "layers"));
    }
}
