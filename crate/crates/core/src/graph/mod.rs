//! Discretization substrate: vertices, k-NN graph, Voronoi partition.

mod knn;
mod partition;
mod vertices;

pub use knn::{
    build_knn_graph, build_knn_graph_weighted, graph_lipschitz, knn_lists, Edge, EdgeWeighting, Graph,
};
pub use partition::{partition_dataset, DatasetPartition};
pub use vertices::{
    select_vertices, select_with, vertex_selectors, IidSelector, KMeansSelector, VertexSelector, VertexSet,
};
