use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::LabeledDataset;
use super::space::{Bounds, OutputSpace};
use crate::error::{invalid, Result};
use crate::rows::Rows;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckerboardSpec {
    pub n_samples: usize,
    /// Cells per axis.
    #[serde(default = "default_grid")]
    pub grid: usize,
    pub seed: u64,
}

fn default_grid() -> usize {
    4
}

impl CheckerboardSpec {
    pub fn new(n_samples: usize, seed: u64) -> Self {
        Self {
            n_samples,
            grid: default_grid(),
            seed,
        }
    }
}

/// Cell of `x` at the given resolution; points on the upper boundary fall in
/// the last cell.
pub fn checkerboard_cell(x: &[f64], grid: usize) -> (usize, usize) {
    let idx = |c: f64| ((c * grid as f64).floor() as usize).min(grid - 1);
    (idx(x[0]), idx(x[1]))
}

/// One-hot label: `[1, 0]` on white cells (even `a + b`), `[0, 1]` on black.
pub fn checkerboard_label(x: &[f64], grid: usize) -> [f64; 2] {
    let (a, b) = checkerboard_cell(x, grid);
    if (a + b) % 2 == 0 {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    }
}

/// Uniform samples on the unit square labeled by the checkerboard pattern.
pub fn gen_checkerboard(spec: &CheckerboardSpec) -> Result<LabeledDataset> {
    if spec.n_samples == 0 {
        return invalid("checkerboard needs at least one sample");
    }
    if spec.grid == 0 {
        return invalid("checkerboard grid must be >= 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut xs = Vec::with_capacity(spec.n_samples * 2);
    let mut ys = Vec::with_capacity(spec.n_samples * 2);
    for _ in 0..spec.n_samples {
        let x = [rng.gen::<f64>(), rng.gen::<f64>()];
        xs.extend_from_slice(&x);
        ys.extend_from_slice(&checkerboard_label(&x, spec.grid));
    }
    LabeledDataset::new(
        Rows::from_flat(2, xs)?,
        Rows::from_flat(2, ys)?,
        Bounds::unit(2),
        OutputSpace::simplex(2),
    )
}
