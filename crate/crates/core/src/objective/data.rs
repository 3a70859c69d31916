use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Batch, Dataset, Targets};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    /// Unit-variance Gaussian clusters with centers spaced on a circle of
    /// radius [`BLOB_RADIUS`] in the first two input dimensions.
    GaussianBlobs,
    /// Two interleaved half circles with 0.1 noise; two classes only.
    TwoArcs,
}

pub const BLOB_RADIUS: f64 = 1.5;
const ARC_NOISE: f64 = 0.1;

/// Generates `n` labelled samples as a single batch.
///
/// Labels cycle `0, 1, .., n_classes - 1` before the rows are shuffled, so
/// class counts differ by at most one.
pub fn make_synthetic_dataset(
    kind: DatasetKind,
    n: usize,
    in_dim: usize,
    n_classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if n_classes < 2 || n < n_classes {
        return Err(invalid(format!(
            "need n >= n_classes >= 2, got n={n}, n_classes={n_classes}"
        )));
    }
    if in_dim == 0 {
        return Err(invalid("input dimension must be positive"));
    }
    if kind == DatasetKind::TwoArcs && (n_classes != 2 || in_dim < 2) {
        return Err(invalid(
            "two-arcs data has exactly 2 classes and needs in_dim >= 2",
        ));
    }

    let mut rng = crate::rng::seeded(seed);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % n_classes;
        let x = match kind {
            DatasetKind::GaussianBlobs => {
                let angle = 2.0 * PI * class as f64 / n_classes as f64;
                (0..in_dim)
                    .map(|j| {
                        let center = match j {
                            0 => BLOB_RADIUS * angle.cos(),
                            1 => BLOB_RADIUS * angle.sin(),
                            _ => 0.0,
                        };
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        center + noise
                    })
                    .collect()
            }
            DatasetKind::TwoArcs => {
                let t = rng.random_range(0.0..PI);
                let (cx, cy) = if class == 0 {
                    (t.cos(), t.sin())
                } else {
                    (1.0 - t.cos(), 0.5 - t.sin())
                };
                (0..in_dim)
                    .map(|j| {
                        let noise: f64 = StandardNormal.sample(&mut rng);
                        let base = match j {
                            0 => cx,
                            1 => cy,
                            _ => 0.0,
                        };
                        base + ARC_NOISE * noise
                    })
                    .collect()
            }
        };
        rows.push((x, class));
    }
    rows.shuffle(&mut rng);

    let inputs = rows.iter().flat_map(|(x, _)| x.iter().copied()).collect();
    let labels = rows.iter().map(|(_, y)| *y).collect();
    Dataset::new(
        vec![Batch::new(inputs, in_dim, Targets::Classes(labels))?],
        seed,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn class_counts(ds: &Dataset, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for &y in ds.full().classes().unwrap() {
            counts[y] += 1;
        }
        counts
    }

    #[test]
    fn blobs_are_balanced() {
        let ds = make_synthetic_dataset(DatasetKind::GaussianBlobs, 100, 2, 2, 7).unwrap();
        assert_eq!(class_counts(&ds, 2), vec![50, 50]);
        let ds = make_synthetic_dataset(DatasetKind::GaussianBlobs, 11, 3, 3, 7).unwrap();
        assert_eq!(class_counts(&ds, 3), vec![4, 4, 3]);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        for kind in [DatasetKind::GaussianBlobs, DatasetKind::TwoArcs] {
            let a = make_synthetic_dataset(kind, 50, 2, 2, 7).unwrap();
            let b = make_synthetic_dataset(kind, 50, 2, 2, 7).unwrap();
            let c = make_synthetic_dataset(kind, 50, 2, 2, 8).unwrap();
            assert_eq!(a, b);
            let bits = |d: &Dataset| {
                d.full()
                    .inputs()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            };
            assert_eq!(bits(&a), bits(&b));
            assert_ne!(a, c);
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(make_synthetic_dataset(DatasetKind::GaussianBlobs, 1, 2, 2, 0).is_err());
        assert!(make_synthetic_dataset(DatasetKind::GaussianBlobs, 10, 2, 1, 0).is_err());
        assert!(make_synthetic_dataset(DatasetKind::TwoArcs, 10, 2, 3, 0).is_err());
        assert!(make_synthetic_dataset(DatasetKind::TwoArcs, 10, 1, 2, 0).is_err());
    }
}
