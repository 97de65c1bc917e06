use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{count_distinct, kmeans, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::registry::Registry;
use crate::rows::{dist2, Rows};

/// Vertex embeddings X_1..X_n in input space; pairwise distinct, n >= 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSet {
    points: Rows,
    seed: u64,
}

impl VertexSet {
    pub fn new(points: Rows, seed: u64) -> Result<Self> {
        if points.len() < 2 {
            return invalid("a vertex set needs at least two points");
        }
        for i in 0..points.len() {
            for j in 0..i {
                if dist2(points.row(i), points.row(j)) == 0.0 {
                    return Err(Error::DegenerateDataset(format!(
                        "vertices {j} and {i} coincide"
                    )));
                }
            }
        }
        Ok(Self { points, seed })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Rows {
        &self.points
    }

    pub fn point(&self, i: usize) -> &[f64] {
        self.points.row(i)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Index of the nearest vertex; the lowest index wins ties.
    pub fn nearest(&self, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.points.iter().enumerate() {
            let d = dist2(x, p);
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Coordinates as CSV with header `x0,..`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record((0..self.dim()).map(|i| format!("x{i}")))?;
        for p in self.points.iter() {
            w.write_record(p.iter().map(|v| format!("{v:?}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R, seed: u64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let dim = r.headers()?.len();
        let mut flat = Vec::new();
        for rec in r.records() {
            for f in rec?.iter() {
                flat.push(f.trim().parse::<f64>().map_err(|_| {
                    Error::InvalidArgument(format!("non-numeric vertex coordinate `{f}`"))
                })?);
            }
        }
        Self::new(Rows::from_flat(dim, flat)?, seed)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }
}

/// A way of choosing graph vertices from a dataset.
pub trait VertexSelector: Send + Sync {
    fn name(&self) -> &'static str;

    fn select(&self, dataset: &LabeledDataset, n: usize, seed: u64) -> Result<Rows>;
}

/// Uniform sampling without replacement from the dataset inputs.
#[derive(Debug, Default, Clone, Copy)]
pub struct IidSelector;

impl VertexSelector for IidSelector {
    fn name(&self) -> &'static str {
        "iid"
    }

    fn select(&self, dataset: &LabeledDataset, n: usize, seed: u64) -> Result<Rows> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picked = sample(&mut rng, dataset.len(), n).into_vec();
        let pts = dataset.inputs().select(&picked);
        if count_distinct(&pts) < n {
            // Duplicate inputs were drawn; fall back to the first n distinct
            // inputs in the sampled permutation.
            let perm = sample(&mut ChaCha8Rng::seed_from_u64(seed), dataset.len(), dataset.len());
            let mut seen = std::collections::HashSet::new();
            let mut chosen = Vec::with_capacity(n);
            for i in perm.iter() {
                let key: Vec<u64> = dataset.input(i).iter().map(|v| (v + 0.0).to_bits()).collect();
                if seen.insert(key) {
                    chosen.push(i);
                    if chosen.len() == n {
                        break;
                    }
                }
            }
            return Ok(dataset.inputs().select(&chosen));
        }
        Ok(pts)
    }
}

/// K-means centroids of the dataset inputs.
#[derive(Debug, Clone, Copy)]
pub struct KMeansSelector {
    pub max_iters: usize,
}

impl Default for KMeansSelector {
    fn default() -> Self {
        Self { max_iters: 50 }
    }
}

impl VertexSelector for KMeansSelector {
    fn name(&self) -> &'static str {
        "kmeans"
    }

    fn select(&self, dataset: &LabeledDataset, n: usize, seed: u64) -> Result<Rows> {
        Ok(kmeans(dataset.inputs(), n, self.max_iters, seed)?.centroids)
    }
}

pub fn vertex_selectors() -> Registry<dyn VertexSelector> {
    let mut reg: Registry<dyn VertexSelector> = Registry::new("vertex selector");
    reg.register("iid", || Box::new(IidSelector));
    reg.register("kmeans", || Box::new(KMeansSelector::default()));
    reg
}

/// Picks `n` distinct vertices with the named method.
pub fn select_vertices(dataset: &LabeledDataset, n: usize, method: &str, seed: u64) -> Result<VertexSet> {
    let selector = vertex_selectors().create(method)?;
    select_with(selector.as_ref(), dataset, n, seed)
}

pub fn select_with(
    selector: &dyn VertexSelector,
    dataset: &LabeledDataset,
    n: usize,
    seed: u64,
) -> Result<VertexSet> {
    if n < 2 || n > dataset.len() {
        return invalid(format!(
            "vertex count {n} must lie in [2, {}]",
            dataset.len()
        ));
    }
    let distinct = count_distinct(dataset.inputs());
    if distinct < n {
        return Err(Error::DegenerateDataset(format!(
            "only {distinct} distinct inputs, cannot pick {n} distinct vertices"
        )));
    }
    VertexSet::new(selector.select(dataset, n, seed)?, seed)
}
