//! Dataset generation and ingestion.

mod checkerboard;
mod dataset;
mod idx;
mod kmeans;
mod space;

pub use checkerboard::{checkerboard_cell, checkerboard_label, gen_checkerboard, CheckerboardSpec};
pub use dataset::LabeledDataset;
pub use idx::{encode_idx, idx_to_dataset, parse_idx, read_idx, IdxTensor};
pub use kmeans::{count_distinct, kmeans, KMeansResult};
pub use space::{project_simplex, Bounds, OutputSpace};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};

/// Deterministic shuffled split into (train, test); both keep the original
/// sample order.
pub fn split(
    dataset: &LabeledDataset,
    test_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return invalid(format!("test fraction {test_fraction} must lie in (0, 1)"));
    }
    let n = dataset.len();
    if n < 2 {
        return invalid("need at least two samples to split");
    }
    let n_test = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    Ok((dataset.subset(&train)?, dataset.subset(&test)?))
}
