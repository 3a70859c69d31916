use crate::error::Result;
use crate::objective::{
    eval_grad, finite_diff_grad, make_synthetic_dataset, Activation, DatasetKind, Mlp, Objective,
    Quadratic,
};
use crate::optim::{step, OptimizerConfig, Schedule, StepCounters, TrainerState, Variant};
use crate::sparsity::{random_mask, Mask};
use crate::ParamVector;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        name,
        passed,
        detail,
    }
}

fn gradient_check() -> Result<Check> {
    let data = make_synthetic_dataset(DatasetKind::GaussianBlobs, 24, 2, 2, 7)?;
    let batch = data.full();
    let mlp = Mlp::new(vec![2, 5, 2], Activation::Tanh)?;
    let theta = mlp.initial_point(3);
    let mut c = StepCounters::default();
    let g = eval_grad(&mlp, &theta, &batch, &mut c)?;
    let fd = finite_diff_grad(&mlp, &theta, &batch, 1e-5)?;
    let err = g
        .iter()
        .zip(fd.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(check(
        "mlp gradient matches finite differences",
        err < 1e-6,
        format!("max abs error {err:.2e}"),
    ))
}

fn cost_contract() -> Result<Check> {
    let q = Quadratic::diagonal(&[1.0, 2.0, 3.0, 4.0], vec![0.5; 4])?;
    let batch = crate::Batch::unit();
    let mask = random_mask(4, 2, 1)?;
    let mut got = Vec::new();
    for v in [Variant::Sgd, Variant::Sam, Variant::ZoSam] {
        let mut cfg = OptimizerConfig::new(v);
        cfg.rge.m = 8;
        let mut st =
            TrainerState::new(ParamVector::new(vec![1.0; 4]), mask.clone(), 0)?.with_horizon(1);
        step(&mut st, &q, &batch, None, &cfg)?;
        got.push((st.counters.backward_passes, st.counters.forward_evals));
    }
    let want = vec![(1, 1), (2, 2), (1, 17)];
    Ok(check(
        "per-step evaluation counts",
        got == want,
        format!("(backward, forward) = {got:?}"),
    ))
}

fn reduction() -> Result<Check> {
    let q = Quadratic::diagonal(&[1.0, 3.0], vec![1.0, -1.0])?;
    let batch = crate::Batch::unit();
    let mut traces = Vec::new();
    for v in [Variant::Sgd, Variant::Sam, Variant::ZoSam] {
        let mut cfg = OptimizerConfig::new(v);
        cfg.rho = Schedule::Constant(0.0);
        let mut st = TrainerState::new(ParamVector::new(vec![2.0, -1.0]), Mask::dense(2), 5)?
            .with_horizon(10);
        for _ in 0..10 {
            step(&mut st, &q, &batch, None, &cfg)?;
        }
        traces.push((st.theta.clone(), st.counters));
    }
    let same = traces.windows(2).all(|w| w[0] == w[1]);
    Ok(check("zero radius reduces to sgd", same, String::new()))
}

fn mask_invariant() -> Result<Check> {
    let q = Quadratic::diagonal(&[1.0; 10], vec![1.0; 10])?;
    let batch = crate::Batch::unit();
    let mask = random_mask(10, 3, 9)?;
    let mut st =
        TrainerState::new(ParamVector::new(vec![1.0; 10]), mask.clone(), 2)?.with_horizon(20);
    let cfg = OptimizerConfig::new(Variant::ZoSam);
    for _ in 0..20 {
        step(&mut st, &q, &batch, None, &cfg)?;
    }
    let ok = st
        .theta
        .iter()
        .enumerate()
        .all(|(j, v)| mask.is_active(j) || *v == 0.0);
    Ok(check(
        "pruned coordinates stay zero",
        ok,
        format!("{} active of 10", mask.count_active()),
    ))
}

/// Quick internal consistency checks; each returns pass/fail with detail.
pub fn selftest() -> Vec<Check> {
    type Probe = fn() -> Result<Check>;
    let checks: [(&'static str, Probe); 4] = [
        ("mlp gradient matches finite differences", gradient_check),
        ("per-step evaluation counts", cost_contract),
        ("zero radius reduces to sgd", reduction),
        ("pruned coordinates stay zero", mask_invariant),
    ];
    checks
        .iter()
        .map(|(name, f)| f().unwrap_or_else(|e| check(name, false, e.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn selftest_passes() {
        for c in super::selftest() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
