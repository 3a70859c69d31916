use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::config::ExperimentConfig;
use crate::diagnostics::loss_slice;
use crate::error::Result;
use crate::objective::{make_synthetic_dataset, Builtin, Dataset};
use crate::optim::{train, TrainConfig, TrainingTrace, Variant};
use crate::par::map_indexed;

pub const METRICS_FILE: &str = "metrics.csv";

pub const METRICS_COLUMNS: [&str; 13] = [
    "variant",
    "seed",
    "status",
    "epoch",
    "step",
    "train_loss",
    "train_acc",
    "eval_acc",
    "grad_variance",
    "forward_evals",
    "backward_passes",
    "sparsity_actual",
    "mask_checksum",
];

/// One (optimizer, seed) training run and how it ended.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub variant: Variant,
    pub seed: u64,
    pub outcome: std::result::Result<TrainingTrace, String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunArtifacts {
    pub metrics: PathBuf,
    pub final_states: Vec<PathBuf>,
    pub slices: Vec<PathBuf>,
    /// `(variant, seed, error)` for every run that did not finish.
    pub failures: Vec<(Variant, u64, String)>,
}

/// Train and evaluation splits shared by every run of an experiment.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<(Dataset, Dataset)> {
    let d = &cfg.dataset;
    let all = make_synthetic_dataset(d.kind, d.n_samples, d.in_dim, d.n_classes, d.seed)?;
    let (train_set, eval_set) = all.split(cfg.eval_fraction, d.seed)?;
    Ok((train_set.rebatch(cfg.batch_size)?, eval_set))
}

fn train_config(cfg: &ExperimentConfig, variant: Variant, seed: u64) -> TrainConfig {
    let mut tc = TrainConfig::new(cfg.optimizer(variant), cfg.alpha, cfg.epochs, seed);
    tc.mask_init = cfg.mask_init;
    tc.scheduler = cfg.scheduler;
    tc.variance = cfg.variance;
    tc
}

/// Trains every (optimizer, seed) pair. Runs execute in parallel but the
/// result order is always optimizers-major, seeds-minor.
pub fn execute(cfg: &ExperimentConfig) -> Result<(Builtin, Dataset, Vec<RunResult>)> {
    let obj = cfg.build_objective()?;
    let (train_set, eval_set) = prepare_data(cfg)?;
    let pairs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results = map_indexed(pairs.len(), |i| {
        let (variant, seed) = pairs[i];
        let tc = train_config(cfg, variant, seed);
        let outcome = train(&obj, &train_set, Some(&eval_set), &tc).map_err(|e| e.to_string());
        RunResult {
            variant,
            seed,
            outcome,
        }
    });
    Ok((obj, train_set, results))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Metrics CSV: a `#` block echoing the resolved config, a header row, then
/// one row per epoch per run. A failed run contributes one `failed` row.
pub fn metrics_csv(cfg: &ExperimentConfig, results: &[RunResult]) -> String {
    let mut out = String::from("# zosam metrics\n");
    for line in cfg.to_text().lines() {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(&METRICS_COLUMNS.join(","));
    out.push('\n');
    for r in results {
        let v = r.variant.label();
        match &r.outcome {
            Ok(trace) => {
                for e in &trace.epochs {
                    let _ = writeln!(
                        out,
                        "{v},{},ok,{},{},{},{},{},{},{},{},{},{:016x}",
                        r.seed,
                        e.epoch,
                        e.step,
                        e.train_loss,
                        opt(e.train_acc),
                        opt(e.eval_acc),
                        opt(e.grad_variance),
                        e.counters.forward_evals,
                        e.counters.backward_passes,
                        e.sparsity,
                        e.mask_checksum
                    );
                }
            }
            Err(_) => {
                let _ = writeln!(out, "{v},{},failed,,,,,,,,,,", r.seed);
            }
        }
    }
    out
}

/// Final mask in its text form followed by one line of parameters.
pub fn final_state_text(trace: &TrainingTrace) -> String {
    let theta: Vec<String> = trace.final_theta.iter().map(|x| x.to_string()).collect();
    format!("{}{}\n", trace.final_mask, theta.join(" "))
}

fn stem(variant: Variant, seed: u64) -> String {
    format!("{}_seed{seed}", variant.label())
}

fn write_slices(
    cfg: &ExperimentConfig,
    obj: &Builtin,
    train_set: &Dataset,
    results: &[RunResult],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let mut paths = Vec::new();
    for r in results {
        if let Ok(trace) = &r.outcome {
            let slice = loss_slice(
                obj,
                &trace.final_theta,
                &trace.final_mask,
                train_set,
                &cfg.slice,
            )?;
            let path = out_dir.join(format!("slice_{}.csv", stem(r.variant, r.seed)));
            fs::write(&path, slice.to_csv())?;
            paths.push(path);
        }
    }
    Ok(paths)
}

/// Trains everything in `cfg` and writes the metrics, final states and,
/// when enabled, loss slices into `out_dir`. Individual run failures are
/// recorded rather than aborting the other runs.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir)?;
    let (obj, train_set, results) = execute(cfg)?;
    let metrics = out_dir.join(METRICS_FILE);
    fs::write(&metrics, metrics_csv(cfg, &results))?;
    let mut artifacts = RunArtifacts {
        metrics,
        ..Default::default()
    };
    for r in &results {
        match &r.outcome {
            Ok(trace) => {
                let path = out_dir.join(format!("final_{}.txt", stem(r.variant, r.seed)));
                fs::write(&path, final_state_text(trace))?;
                artifacts.final_states.push(path);
            }
            Err(e) => artifacts.failures.push((r.variant, r.seed, e.clone())),
        }
    }
    if cfg.slice_on_run {
        artifacts.slices = write_slices(cfg, &obj, &train_set, &results, out_dir)?;
    }
    Ok(artifacts)
}

/// Trains with the first seed only and writes just the loss slices.
pub fn run_slices(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunArtifacts> {
    fs::create_dir_all(out_dir)?;
    let mut single = cfg.clone();
    single.seeds.truncate(1);
    let (obj, train_set, results) = execute(&single)?;
    let slices = write_slices(&single, &obj, &train_set, &results, out_dir)?;
    let failures = results
        .iter()
        .filter_map(|r| {
            r.outcome
                .as_ref()
                .err()
                .map(|e| (r.variant, r.seed, e.clone()))
        })
        .collect();
    Ok(RunArtifacts {
        slices,
        failures,
        ..Default::default()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig::parse(
            "objective=mlp\nlayers=2,4,2\nepochs=2\nn_samples=80\nbatch_size=16\nseeds=1,2\nrge_m=4\n",
        )
        .unwrap()
    }

    #[test]
    fn metrics_rows_cover_every_run_and_epoch() {
        let cfg = tiny();
        let (_, _, results) = execute(&cfg).unwrap();
        let csv = metrics_csv(&cfg, &results);
        let rows: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(rows[0], METRICS_COLUMNS.join(","));
        assert_eq!(rows.len(), 1 + 3 * 2 * 2);
        assert!(rows[1].starts_with("sgd,1,ok,1,"));
        assert!(rows.last().unwrap().starts_with("zosam,2,ok,2,"));
        assert!(csv.contains("# alpha=0.9\n"));
    }

    #[test]
    fn execution_is_deterministic() {
        let cfg = tiny();
        let a = metrics_csv(&cfg, &execute(&cfg).unwrap().2);
        let b = metrics_csv(&cfg, &execute(&cfg).unwrap().2);
        assert_eq!(a, b);
    }
}
