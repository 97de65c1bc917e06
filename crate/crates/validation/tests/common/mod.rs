#![allow(dead_code)]

use lipgraph::data::{Bounds, LabeledDataset, OutputSpace};
use lipgraph::experiment::{prepare, Prepared, RunConfig};
use lipgraph::graph::{build_knn_graph, partition_dataset, DatasetPartition, Graph, VertexSet};
use lipgraph::{LossSpec, Rows};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Instance {
    pub graph: Graph,
    pub partition: DatasetPartition,
    pub dataset: LabeledDataset,
    pub spec: LossSpec,
}

/// Random problem on the unit square: `n` vertices, a k-NN graph, between n
/// and 4n samples, scalar labels in [0, 1] or one-hot labels on a simplex.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, k: usize, dim_y: usize) -> Instance {
    for _ in 0..1000 {
        let n_samples = rng.gen_range(n..=4 * n);
        let verts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
        let xs: Vec<[f64; 2]> = (0..n_samples).map(|_| [rng.gen(), rng.gen()]).collect();
        let (space, ys): (OutputSpace, Vec<Vec<f64>>) = if dim_y == 1 {
            (OutputSpace::unit_box(1), (0..n_samples).map(|_| vec![rng.gen()]).collect())
        } else {
            let ys = (0..n_samples)
                .map(|_| {
                    let mut y = vec![0.0; dim_y];
                    y[rng.gen_range(0..dim_y)] = 1.0;
                    y
                })
                .collect();
            (OutputSpace::simplex(dim_y), ys)
        };
        let dataset =
            LabeledDataset::new(Rows::from_rows(&xs).unwrap(), Rows::from_rows(&ys).unwrap(), Bounds::unit(2), space)
                .unwrap();
        let vs = VertexSet::new(Rows::from_rows(&verts).unwrap(), 0).unwrap();
        // Retry until the k-NN graph is connected.
        let Ok(graph) = build_knn_graph(vs.clone(), k) else {
            continue;
        };
        let partition = partition_dataset(&vs, &dataset).unwrap();
        let spec = LossSpec::squared(dataset.output_space());
        return Instance {
            graph,
            partition,
            dataset,
            spec,
        };
    }
    panic!("no connected {k}-NN graph on {n} random vertices in 1000 draws");
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Checkerboard train/test sets with an iid vertex sample.
pub fn checkerboard(n: usize, k: usize, train: usize, test: usize, seed: u64) -> Prepared {
    let cfg = RunConfig::from_json(&format!(
        r#"{{
            "seed": {seed},
            "dataset": {{"kind": "checkerboard", "n_samples": {train}, "test_samples": {test}}},
            "graph": {{"n": {n}, "k": {k}}}
        }}"#
    ))
    .unwrap();
    prepare(&cfg).unwrap()
}

/// Largest violation of `a[i+1] <= a[i]`.
pub fn max_increase(a: &[f64]) -> f64 {
    a.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
}

/// Largest violation of `a[i+1] >= a[i]`.
pub fn max_decrease(a: &[f64]) -> f64 {
    a.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
}
