use zosam::diagnostics::sharpness_probe;
use zosam::objective::{make_synthetic_dataset, Activation, DatasetKind, Mlp, Quadratic};
use zosam::optim::{train, OptimizerConfig, TrainConfig, Variant};
use zosam::sparsity::Mask;
use zosam::Batch;

#[test]
fn dense_sgd_fits_two_arcs() {
    let data = make_synthetic_dataset(DatasetKind::TwoArcs, 1000, 2, 2, 3).unwrap();
    let train_set = data.rebatch(32).unwrap();
    let mlp = Mlp::new(vec![2, 16, 2], Activation::Tanh).unwrap();
    let cfg = TrainConfig::new(OptimizerConfig::new(Variant::Sgd), 0.0, 200, 0);
    let trace = train(&mlp, &train_set, None, &cfg).unwrap();
    let accs: Vec<f64> = trace.epochs.iter().map(|e| e.train_acc.unwrap()).collect();
    let first = accs.iter().position(|&a| a >= 0.95);
    assert!(
        first.is_some(),
        "best train accuracy {:?}",
        accs.iter().cloned().fold(0.0, f64::max)
    );
}

#[test]
fn probe_approaches_largest_curvature() {
    let q = Quadratic::diagonal(&[1.0, 2.0, 4.0], vec![0.0; 3]).unwrap();
    let rho = 0.1;
    let probe =
        sharpness_probe(&q, &[0.0; 3], &Mask::dense(3), &Batch::unit(), rho, 1000, 5).unwrap();
    let limit = 0.5 * rho * rho * 4.0;
    assert!(
        (probe - limit).abs() <= 0.1 * limit,
        "probe {probe} vs {limit}"
    );
}

#[test]
fn probe_grows_with_radius_at_a_minimum() {
    let q = Quadratic::diagonal(&[1.0, 3.0, 0.5, 2.0], vec![0.0; 4]).unwrap();
    let mut last = 0.0;
    for rho in [0.01, 0.05, 0.1, 0.5, 1.0] {
        let p =
            sharpness_probe(&q, &[0.0; 4], &Mask::dense(4), &Batch::unit(), rho, 200, 9).unwrap();
        assert!(p >= last);
        last = p;
    }
}
