use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vertices::VertexSet;
use crate::error::{invalid, Error, Result};
use crate::rows::{dist, dist2, Rows};

/// Undirected edge, stored once with `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub weight: f64,
    /// |X_i - X_j|
    pub length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EdgeWeighting {
    #[default]
    Unit,
    /// w = exp(-|X_i - X_j|^2 / bandwidth^2)
    Gaussian { bandwidth: f64 },
}

impl EdgeWeighting {
    fn weight(&self, length: f64) -> f64 {
        match *self {
            Self::Unit => 1.0,
            Self::Gaussian { bandwidth } => (-(length * length) / (bandwidth * bandwidth)).exp(),
        }
    }
}

/// Connected, undirected, weighted graph over a vertex set.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    vertices: VertexSet,
    edges: Vec<Edge>,
    /// Per vertex: (neighbor, edge index), sorted by neighbor.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Graph {
    /// Builds a graph from undirected `(i, j, w)` triples. Either orientation
    /// may be given; a pair listed in both orientations must carry equal
    /// weights.
    pub fn from_edges(vertices: VertexSet, triples: &[(usize, usize, f64)]) -> Result<Self> {
        let n = vertices.len();
        let mut edges: Vec<Edge> = Vec::with_capacity(triples.len());
        let mut sorted: Vec<(usize, usize, f64)> = triples
            .iter()
            .map(|&(i, j, w)| (i.min(j), i.max(j), w))
            .collect();
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for (i, j, w) in sorted {
            if i == j {
                return invalid(format!("self-loop at vertex {i}"));
            }
            if j >= n {
                return invalid(format!("edge ({i}, {j}) references a missing vertex"));
            }
            if !(w > 0.0) || !w.is_finite() {
                return invalid(format!("edge ({i}, {j}) has non-positive weight {w}"));
            }
            if let Some(last) = edges.last() {
                if last.i == i && last.j == j {
                    if last.weight != w {
                        return invalid(format!("edge ({i}, {j}) listed with two weights"));
                    }
                    continue;
                }
            }
            let length = dist(vertices.point(i), vertices.point(j));
            edges.push(Edge { i, j, weight: w, length });
        }
        let mut adjacency = vec![Vec::new(); n];
        for (e, edge) in edges.iter().enumerate() {
            adjacency[edge.i].push((edge.j, e));
            adjacency[edge.j].push((edge.i, e));
        }
        for a in &mut adjacency {
            a.sort_unstable();
        }
        let g = Self {
            vertices,
            edges,
            adjacency,
        };
        let (count, labels) = g.components();
        if count > 1 {
            return Err(Error::GraphDisconnected {
                n_components: count,
                labels,
            });
        }
        Ok(g)
    }

    pub fn vertices(&self) -> &VertexSet {
        &self.vertices
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn edge_between(&self, i: usize, j: usize) -> Option<usize> {
        self.adjacency[i]
            .binary_search_by_key(&j, |&(nb, _)| nb)
            .ok()
            .map(|pos| self.adjacency[i][pos].1)
    }

    /// Same topology with weights replaced by `f(edge)`.
    pub fn reweighted(&self, f: impl Fn(&Edge) -> f64) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.weight = f(e);
        }
        g
    }

    /// Connected components by breadth-first search; labels in order of
    /// first discovery.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.n_vertices();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut queue = std::collections::VecDeque::new();
        for s in 0..n {
            if label[s] != usize::MAX {
                continue;
            }
            label[s] = count;
            queue.push_back(s);
            while let Some(u) = queue.pop_front() {
                for &(v, _) in &self.adjacency[u] {
                    if label[v] == usize::MAX {
                        label[v] = count;
                        queue.push_back(v);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }

    /// Shortest-path distances (by edge length) from `source`.
    pub fn path_lengths_from(&self, source: usize) -> Vec<f64> {
        use std::cmp::Ordering;
        use std::collections::BinaryHeap;

        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, o: &Self) -> Option<Ordering> {
                Some(self.cmp(o))
            }
        }
        impl Ord for Item {
            fn cmp(&self, o: &Self) -> Ordering {
                o.0.total_cmp(&self.0).then(o.1.cmp(&self.1))
            }
        }

        let mut d = vec![f64::INFINITY; self.n_vertices()];
        d[source] = 0.0;
        let mut heap = BinaryHeap::from([Item(0.0, source)]);
        while let Some(Item(du, u)) = heap.pop() {
            if du > d[u] {
                continue;
            }
            for &(v, e) in &self.adjacency[u] {
                let nd = du + self.edges[e].length;
                if nd < d[v] {
                    d[v] = nd;
                    heap.push(Item(nd, v));
                }
            }
        }
        d
    }

    /// Edge list CSV `i,j,w`, one row per undirected edge.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["i", "j", "w"])?;
        for e in &self.edges {
            w.write_record([e.i.to_string(), e.j.to_string(), format!("{:?}", e.weight)])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(vertices: VertexSet, reader: R) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            i: usize,
            j: usize,
            w: f64,
        }
        let mut r = csv::Reader::from_reader(reader);
        let mut triples = Vec::new();
        for row in r.deserialize() {
            let row: Row = row?;
            triples.push((row.i, row.j, row.w));
        }
        Self::from_edges(vertices, &triples)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(File::create(path)?)
    }

    pub fn triples(&self) -> Vec<(usize, usize, f64)> {
        self.edges.iter().map(|e| (e.i, e.j, e.weight)).collect()
    }
}

/// The `k` nearest other vertices of every vertex (Euclidean, lowest index
/// first among equal distances).
pub fn knn_lists(points: &Rows, k: usize) -> Vec<Vec<usize>> {
    let n = points.len();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let p = points.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (dist2(p, points.row(j)), j))
                .collect();
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect()
}

/// k-NN graph symmetrized by union, unit weights.
pub fn build_knn_graph(vertices: VertexSet, k: usize) -> Result<Graph> {
    build_knn_graph_weighted(vertices, k, EdgeWeighting::Unit)
}

pub fn build_knn_graph_weighted(vertices: VertexSet, k: usize, weighting: EdgeWeighting) -> Result<Graph> {
    let n = vertices.len();
    if k < 1 || k > n - 1 {
        return invalid(format!("k = {k} must lie in [1, {}]", n - 1));
    }
    if let EdgeWeighting::Gaussian { bandwidth } = weighting {
        if !(bandwidth > 0.0) {
            return invalid("gaussian bandwidth must be positive");
        }
    }
    let lists = knn_lists(vertices.points(), k);
    let mut triples = Vec::with_capacity(n * k);
    for (i, list) in lists.iter().enumerate() {
        for &j in list {
            let w = weighting.weight(dist(vertices.point(i), vertices.point(j)));
            triples.push((i, j, w));
        }
    }
    Graph::from_edges(vertices, &triples)
}

/// Smallest alpha with |v_i - v_j| <= alpha |X_i - X_j| on every edge.
pub fn graph_lipschitz(graph: &Graph, labeling: &Rows) -> Result<f64> {
    if labeling.len() != graph.n_vertices() {
        return invalid(format!(
            "labeling has {} rows for {} vertices",
            labeling.len(),
            graph.n_vertices()
        ));
    }
    let mut best: f64 = 0.0;
    for e in graph.edges() {
        if e.length == 0.0 {
            return Err(Error::DivisionDegenerate(e.i, e.j));
        }
        best = best.max(dist(labeling.row(e.i), labeling.row(e.j)) / e.length);
    }
    Ok(best)
}
