//! Nearest-vertex classification, test metrics and perturbation sensitivity.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{invalid, Result};
use crate::graph::{graph_lipschitz, Graph, VertexSet};
use crate::loss::{loss_unchecked, LossSpec};
use crate::rows::{argmax, dist, Rows};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: usize,
    pub confidence: f64,
    pub vertex: usize,
}

fn check_model(vertices: &VertexSet, labeling: &Rows) -> Result<()> {
    if labeling.len() != vertices.len() {
        return invalid(format!(
            "labeling has {} rows for {} vertices",
            labeling.len(),
            vertices.len()
        ));
    }
    Ok(())
}

fn classify_unchecked(vertices: &VertexSet, labeling: &Rows, x: &[f64]) -> Classification {
    let vertex = vertices.nearest(x);
    let v = labeling.row(vertex);
    let class = argmax(v);
    Classification {
        class,
        confidence: v[class],
        vertex,
    }
}

/// Output of the nearest vertex; ties go to the lowest vertex index and the
/// lowest class index.
pub fn classify(vertices: &VertexSet, labeling: &Rows, x: &[f64]) -> Result<Classification> {
    check_model(vertices, labeling)?;
    if x.len() != vertices.dim() {
        return invalid(format!("input of length {} for {}-dimensional vertices", x.len(), vertices.dim()));
    }
    Ok(classify_unchecked(vertices, labeling, x))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub mean_confidence: f64,
    pub test_loss: f64,
    pub n_test: usize,
}

pub fn evaluate(vertices: &VertexSet, labeling: &Rows, testset: &LabeledDataset, spec: &LossSpec) -> Result<EvalMetrics> {
    check_model(vertices, labeling)?;
    if testset.is_empty() {
        return invalid("test set is empty");
    }
    if testset.dim_x() != vertices.dim() || testset.dim_y() != labeling.dim() {
        return invalid("test set dimensions do not match the model");
    }
    let per_sample: Vec<(bool, f64, f64)> = (0..testset.len())
        .into_par_iter()
        .map(|s| {
            let c = classify_unchecked(vertices, labeling, testset.input(s));
            let y = testset.output(s);
            let loss = loss_unchecked(spec.kind, labeling.row(c.vertex), y);
            (c.class == argmax(y), c.confidence, loss)
        })
        .collect();
    let n = per_sample.len() as f64;
    let (mut hits, mut conf, mut loss) = (0usize, 0.0, 0.0);
    for (hit, c, l) in per_sample {
        hits += hit as usize;
        conf += c;
        loss += l;
    }
    Ok(EvalMetrics {
        accuracy: hits as f64 / n,
        mean_confidence: conf / n,
        test_loss: loss / n,
        n_test: testset.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub delta: f64,
    /// max over samples of |v(x) - v(x + delta u)|
    pub max_confidence_degradation: f64,
    pub degradations: Vec<f64>,
    pub max_loss_degradation: f64,
    pub lipschitz: f64,
    /// lip(l) * lipschitz * delta
    pub bound_value: f64,
    /// Perturbations that moved a sample to a neighbouring vertex.
    pub adjacent_hops: usize,
    /// Perturbations that jumped to a vertex not adjacent to the nominal one.
    pub distant_hops: usize,
    /// Every hop satisfied its loss-degradation bound.
    pub bound_satisfied: bool,
}

/// Distance from `x` to the segment [a, b].
fn point_segment_distance(x: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut dot = 0.0;
    for ((xi, ai), bi) in x.iter().zip(a).zip(b) {
        ab2 += (bi - ai) * (bi - ai);
        dot += (xi - ai) * (bi - ai);
    }
    let t = if ab2 > 0.0 { (dot / ab2).clamp(0.0, 1.0) } else { 0.0 };
    x.iter()
        .zip(a)
        .zip(b)
        .map(|((xi, ai), bi)| {
            let p = ai + t * (bi - ai);
            (xi - p) * (xi - p)
        })
        .sum::<f64>()
        .sqrt()
}

/// Unit vector orthogonal to `dir`: the first standard basis vector whose
/// component orthogonal to `dir` has norm at least 1/2, normalized.
pub fn orthogonal_direction(dir: &[f64]) -> Result<Vec<f64>> {
    let dim = dir.len();
    if dim < 2 {
        return invalid("a perpendicular direction needs at least two input dimensions");
    }
    let n = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return invalid("edge direction is zero");
    }
    let unit: Vec<f64> = dir.iter().map(|x| x / n).collect();
    for k in 0..dim {
        let mut r: Vec<f64> = unit.iter().map(|u| -unit[k] * u).collect();
        r[k] += 1.0;
        let rn = r.iter().map(|x| x * x).sum::<f64>().sqrt();
        if rn >= 0.5 {
            return Ok(r.into_iter().map(|x| x / rn).collect());
        }
    }
    unreachable!("the residual norms squared sum to dim - 1 >= 1")
}

/// Closest edge incident to vertex `i` (lowest edge index on ties).
fn closest_incident_edge(graph: &Graph, i: usize, x: &[f64]) -> usize {
    let pts = graph.vertices();
    let mut best = (f64::INFINITY, usize::MAX);
    for &(j, e) in graph.neighbors(i) {
        let d = point_segment_distance(x, pts.point(i), pts.point(j));
        if d < best.0 || (d == best.0 && e < best.1) {
            best = (d, e);
        }
    }
    best.1
}

/// Perturbs each test input by `delta` perpendicular to the closest edge at
/// its nearest vertex (clipped to the input box), and measures how the
/// assigned output and its loss change.
///
/// A perturbation that moves the sample from vertex i to vertex j changes the
/// loss by at most lip(l) |v_i - v_j| <= lip(l) L |X_i - X_j|. For adjacent
/// vertices that is checked as lip(l) L max(delta, |X_i - X_j|); for distant
/// hops the graph path length replaces |X_i - X_j|.
pub fn sensitivity(
    vertices: &VertexSet,
    graph: &Graph,
    labeling: &Rows,
    testset: &LabeledDataset,
    delta: f64,
    spec: &LossSpec,
) -> Result<SensitivityReport> {
    if !(delta > 0.0) || !delta.is_finite() {
        return invalid(format!("delta must be positive, got {delta}"));
    }
    check_model(vertices, labeling)?;
    if graph.vertices() != vertices {
        return invalid("graph was built on a different vertex set");
    }
    if testset.dim_x() != vertices.dim() || testset.dim_y() != labeling.dim() {
        return invalid("test set dimensions do not match the model");
    }
    if vertices.dim() < 2 {
        return invalid("sensitivity needs at least two input dimensions");
    }
    let lip = graph_lipschitz(graph, labeling)?;
    let lip_loss = spec.lipschitz_const;
    let bounds = testset.input_bounds();
    // (confidence change, loss change, nominal vertex, perturbed vertex)
    let per_sample: Vec<(f64, f64, usize, usize)> = (0..testset.len())
        .into_par_iter()
        .map(|s| -> Result<(f64, f64, usize, usize)> {
            let x = testset.input(s);
            let y = testset.output(s);
            let i = vertices.nearest(x);
            let e = closest_incident_edge(graph, i, x);
            let edge = graph.edges()[e];
            let dir: Vec<f64> = vertices
                .point(edge.j)
                .iter()
                .zip(vertices.point(edge.i))
                .map(|(a, b)| a - b)
                .collect();
            let u = orthogonal_direction(&dir)?;
            let mut moved: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + delta * b).collect();
            bounds.clip(&mut moved);
            let j = vertices.nearest(&moved);
            let conf = dist(labeling.row(i), labeling.row(j));
            let loss = (loss_unchecked(spec.kind, labeling.row(j), y) - loss_unchecked(spec.kind, labeling.row(i), y)).abs();
            Ok((conf, loss, i, j))
        })
        .collect::<Result<_>>()?;

    let mut degradations = Vec::with_capacity(per_sample.len());
    let (mut max_conf, mut max_loss) = (0.0f64, 0.0f64);
    let (mut adjacent, mut distant) = (0, 0);
    let mut satisfied = true;
    let mut paths: std::collections::BTreeMap<usize, Vec<f64>> = std::collections::BTreeMap::new();
    for &(conf, loss, i, j) in &per_sample {
        degradations.push(conf);
        max_conf = max_conf.max(conf);
        max_loss = max_loss.max(loss);
        if i == j {
            continue;
        }
        let hop = if let Some(e) = graph.edge_between(i, j) {
            adjacent += 1;
            graph.edges()[e].length.max(delta)
        } else {
            distant += 1;
            paths.entry(i).or_insert_with(|| graph.path_lengths_from(i))[j]
        };
        // Relative slack for rounding in the products.
        if loss > lip_loss * lip * hop * (1.0 + 1e-12) + 1e-15 {
            satisfied = false;
        }
    }
    Ok(SensitivityReport {
        delta,
        max_confidence_degradation: max_conf,
        degradations,
        max_loss_degradation: max_loss,
        lipschitz: lip,
        bound_value: lip_loss * lip * delta,
        adjacent_hops: adjacent,
        distant_hops: distant,
        bound_satisfied: satisfied,
    })
}
