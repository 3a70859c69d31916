//! Browser bindings for a handful of small, fast experiments.

use wasm_bindgen::prelude::*;
use zosam::diagnostics::{loss_slice, SliceNorm, SliceParams};
use zosam::objective::{make_synthetic_dataset, Activation, DatasetKind, Mlp, Quadratic};
use zosam::optim::{sam_perturb, train, OptimizerConfig, TrainConfig, Variant};
use zosam::sparsity::Mask;
use zosam::zo::{cosine_similarity, rge_estimate, RgeConfig, StepSize};
use zosam::{Batch, Dataset, StepCounters};

fn js(err: zosam::Error) -> JsError {
    JsError::new(&err.to_string())
}

fn variant(name: &str) -> Result<Variant, JsError> {
    name.parse().map_err(js)
}

fn blobs(seed: u64) -> Result<(Dataset, Dataset), zosam::Error> {
    let data = make_synthetic_dataset(DatasetKind::GaussianBlobs, 400, 2, 2, seed)?;
    let (tr, ev) = data.split(0.2, seed)?;
    Ok((tr.rebatch(32)?, ev))
}

fn demo_mlp() -> Mlp {
    Mlp::new(vec![2, 16, 2], Activation::Tanh).expect("valid layer sizes")
}

fn demo_config(v: Variant, alpha: f64, epochs: usize, seed: u64) -> TrainConfig {
    let mut opt = OptimizerConfig::new(v);
    opt.rge.m = 8;
    TrainConfig::new(opt, alpha, epochs, seed)
}

#[wasm_bindgen]
pub struct Slice {
    offsets: Vec<f64>,
    sgd: Vec<f64>,
    zosam: Vec<f64>,
}

#[wasm_bindgen]
impl Slice {
    #[wasm_bindgen(getter)]
    pub fn offsets(&self) -> Vec<f64> {
        self.offsets.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn sgd(&self) -> Vec<f64> {
        self.sgd.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn zosam(&self) -> Vec<f64> {
        self.zosam.clone()
    }
}

/// Trains a sparse 2-16-2 network with SGD and with ZO-SAM, then slices
/// the training loss along one random direction through each endpoint.
#[wasm_bindgen]
pub fn trained_slices(alpha: f64, epochs: usize, radius: f64, seed: u32) -> Result<Slice, JsError> {
    let seed = u64::from(seed);
    let (tr, ev) = blobs(seed).map_err(js)?;
    let mlp = demo_mlp();
    let params = SliceParams {
        n_dirs: 1,
        radius,
        n_grid: 41,
        seed,
        normalization: SliceNorm::Global,
    };
    let mut profiles = Vec::new();
    let mut offsets = Vec::new();
    for v in [Variant::Sgd, Variant::ZoSam] {
        let trace =
            train(&mlp, &tr, Some(&ev), &demo_config(v, alpha, epochs, seed)).map_err(js)?;
        let s =
            loss_slice(&mlp, &trace.final_theta, &trace.final_mask, &tr, &params).map_err(js)?;
        offsets = s.offsets.clone();
        profiles.push(s.values);
    }
    let zosam = profiles.pop().unwrap_or_default();
    let sgd = profiles.pop().unwrap_or_default();
    Ok(Slice {
        offsets,
        sgd,
        zosam,
    })
}

/// Mean cosine between the zero-order and exact SAM perturbations on
/// `diag(1..=dim)`, for each direction count in `ms`.
#[wasm_bindgen]
pub fn perturbation_alignment(dim: usize, ms: Vec<u32>, trials: u32) -> Result<Vec<f64>, JsError> {
    if dim == 0 || trials == 0 {
        return Err(JsError::new("dim and trials must be positive"));
    }
    let diag: Vec<f64> = (1..=dim).map(|i| i as f64).collect();
    let q = Quadratic::diagonal(&diag, vec![0.0; dim]).map_err(js)?;
    let theta = vec![1.0; dim];
    let mask = Mask::dense(dim);
    let sam = sam_perturb(&diag, 0.05);
    let mut c = StepCounters::default();
    ms.iter()
        .map(|&m| {
            let cfg = RgeConfig {
                m: m as usize,
                delta: StepSize::Fixed(1e-5),
                restrict_to_support: false,
            };
            let mut total = 0.0;
            for t in 0..trials {
                let est = rge_estimate(&q, &theta, &mask, &Batch::unit(), &cfg, t as u64, &mut c)
                    .map_err(js)?;
                total += cosine_similarity(&sam_perturb(&est.grad, 0.05), &sam);
            }
            Ok(total / trials as f64)
        })
        .collect()
}

/// Windowed gradient variance during sparse training, flattened as
/// `[step0, var0, step1, var1, ...]`.
#[wasm_bindgen]
pub fn variance_curve(
    optimizer: &str,
    alpha: f64,
    epochs: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    let v = variant(optimizer)?;
    let seed = u64::from(seed);
    let (tr, ev) = blobs(seed).map_err(js)?;
    let trace = train(
        &demo_mlp(),
        &tr,
        Some(&ev),
        &demo_config(v, alpha, epochs, seed),
    )
    .map_err(js)?;
    Ok(trace
        .variance
        .records
        .iter()
        .flat_map(|&(step, var)| [step as f64, var])
        .collect())
}
