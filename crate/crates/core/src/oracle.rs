//! Brute-force reference solver for tiny Lipschitz-constrained problems.
//!
//! With squared loss the objective is, up to a constant, the mass-weighted
//! distance to the per-cell label means, so the minimizer is a projection of
//! those means onto the feasible set. It is computed by Dykstra's alternating
//! projection over the edge balls and the output space (weighted metric when
//! every cell is occupied, projected gradient otherwise). Scalar problems are
//! additionally solved by exhaustive grid search, and every answer must pass a
//! feasibility and grid-neighbour certificate before it is returned.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, OutputSpace};
use crate::error::{invalid, Error, Result};
use crate::graph::{graph_lipschitz, DatasetPartition, Graph};
use crate::loss::{CellStats, Labeling, LossSpec};
use crate::rows::Rows;

/// Largest n * dim(Y) accepted.
pub const MAX_UNKNOWNS: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Grid points per axis for the scalar grid search.
    pub grid_resolution: usize,
    /// Iterations of the projected-gradient path used when some cell is empty.
    pub pg_iters: usize,
    /// Projected-gradient step, relative to 1 / (2 max cell mass).
    pub pg_step: f64,
    /// Dykstra sweeps per projection.
    pub max_sweeps: usize,
    pub tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            grid_resolution: 41,
            pg_iters: 200_000,
            pg_step: 0.5,
            max_sweeps: 200_000,
            tol: 1e-9,
        }
    }
}

/// Largest grid (points per level) the scalar search will enumerate.
const GRID_BUDGET: f64 = 2.5e7;

struct Feasible<'a> {
    graph: &'a Graph,
    space: &'a OutputSpace,
    alpha: f64,
}

impl Feasible<'_> {
    fn violation(&self, v: &Rows) -> f64 {
        let mut worst: f64 = 0.0;
        for e in self.graph.edges() {
            let d = crate::rows::dist(v.row(e.i), v.row(e.j));
            worst = worst.max(d - self.alpha * e.length);
        }
        for row in v.iter() {
            let mut p = row.to_vec();
            self.space.project(&mut p);
            worst = worst.max(crate::rows::dist(row, &p));
        }
        worst
    }

    /// Projection of `target` onto the feasible set in the metric
    /// sum_i weight_i |v_i|^2 (all weights positive).
    fn project(&self, target: &Rows, weight: &[f64], max_sweeps: usize) -> Rows {
        let dim = target.dim();
        let edges = self.graph.edges();
        let mut x = target.clone();
        let mut inc_edge = vec![0.0; edges.len() * 2 * dim];
        let mut inc_vertex = Rows::zeros(target.len(), dim);
        let mut buf_i = vec![0.0; dim];
        let mut buf_j = vec![0.0; dim];
        for _ in 0..max_sweeps {
            let mut change: f64 = 0.0;
            for (e, edge) in edges.iter().enumerate() {
                let (i, j) = (edge.i, edge.j);
                let inc = &mut inc_edge[e * 2 * dim..(e + 1) * 2 * dim];
                for k in 0..dim {
                    buf_i[k] = x.row(i)[k] + inc[k];
                    buf_j[k] = x.row(j)[k] + inc[dim + k];
                }
                let (wi, wj) = (weight[i], weight[j]);
                let diff = crate::rows::dist(&buf_i, &buf_j);
                let radius = self.alpha * edge.length;
                let (mut pi, mut pj) = (buf_i.clone(), buf_j.clone());
                if diff > radius {
                    let shrink = radius / diff;
                    for k in 0..dim {
                        let center = (wi * buf_i[k] + wj * buf_j[k]) / (wi + wj);
                        let delta = (buf_i[k] - buf_j[k]) * shrink;
                        pi[k] = center + wj / (wi + wj) * delta;
                        pj[k] = center - wi / (wi + wj) * delta;
                    }
                }
                for k in 0..dim {
                    inc[k] = buf_i[k] - pi[k];
                    inc[dim + k] = buf_j[k] - pj[k];
                    change = change.max((x.row(i)[k] - pi[k]).abs()).max((x.row(j)[k] - pj[k]).abs());
                }
                x.row_mut(i).copy_from_slice(&pi);
                x.row_mut(j).copy_from_slice(&pj);
            }
            for i in 0..x.len() {
                let mut p: Vec<f64> = x.row(i).iter().zip(inc_vertex.row(i)).map(|(a, b)| a + b).collect();
                let before = p.clone();
                self.space.project(&mut p);
                for k in 0..dim {
                    inc_vertex.row_mut(i)[k] = before[k] - p[k];
                    change = change.max((x.row(i)[k] - p[k]).abs());
                }
                x.row_mut(i).copy_from_slice(&p);
            }
            if change < 1e-16 {
                break;
            }
        }
        x
    }
}

fn objective(stats: &CellStats, v: &Rows) -> f64 {
    stats.loss(v)
}

/// Exhaustive search over a box grid, refined twice around the incumbent.
/// Returns `None` when the grid would be too large.
fn grid_search(stats: &CellStats, feasible: &Feasible<'_>, resolution: usize) -> Option<Rows> {
    let n = stats.n();
    let (lo, hi) = match feasible.space {
        OutputSpace::Box { lower, upper } => (lower[0], upper[0]),
        OutputSpace::Simplex { .. } => return None,
    };
    if (resolution as f64).powi(n as i32) > GRID_BUDGET {
        return None;
    }
    let mut lower = vec![lo; n];
    let mut upper = vec![hi; n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _level in 0..3 {
        let steps: Vec<f64> = (0..n)
            .map(|i| (upper[i] - lower[i]) / (resolution - 1) as f64)
            .collect();
        let mut idx = vec![0usize; n];
        let mut point = Rows::zeros(n, 1);
        let mut level_best: Option<(f64, Vec<f64>)> = None;
        loop {
            for i in 0..n {
                point.row_mut(i)[0] = lower[i] + steps[i] * idx[i] as f64;
            }
            // Grid points are tested against the exact constraints, with a
            // relative slack for rounding in the last digit.
            let ok = feasible.graph.edges().iter().all(|e| {
                (point.row(e.i)[0] - point.row(e.j)[0]).abs() <= feasible.alpha * e.length * (1.0 + 1e-12)
            });
            if ok {
                let f = objective(stats, &point);
                if level_best.as_ref().map_or(true, |(b, _)| f < *b) {
                    level_best = Some((f, point.as_flat().to_vec()));
                }
            }
            let mut d = 0;
            loop {
                if d == n {
                    break;
                }
                idx[d] += 1;
                if idx[d] < resolution {
                    break;
                }
                idx[d] = 0;
                d += 1;
            }
            if d == n {
                break;
            }
        }
        let (f, p) = level_best?;
        if best.as_ref().map_or(true, |(b, _)| f < *b) {
            best = Some((f, p.clone()));
        }
        let incumbent = &best.as_ref().expect("set above").1;
        for i in 0..n {
            let span = 2.0 * steps[i];
            lower[i] = (incumbent[i] - span).max(lo);
            upper[i] = (incumbent[i] + span).min(hi);
        }
    }
    best.map(|(_, p)| Rows::from_flat(1, p).expect("n rows"))
}

/// Feasible-direction probe of size `step` along every coordinate direction
/// that stays in the output space's affine hull.
fn grid_neighbour_certificate(stats: &CellStats, feasible: &Feasible<'_>, v: &Rows, step: f64, tol: f64) -> Result<()> {
    let base = objective(stats, v);
    let dim = v.dim();
    let directions: Vec<Vec<f64>> = match feasible.space {
        OutputSpace::Box { .. } => (0..dim)
            .map(|k| {
                let mut d = vec![0.0; dim];
                d[k] = 1.0;
                d
            })
            .collect(),
        OutputSpace::Simplex { .. } => {
            let mut out = Vec::new();
            for a in 0..dim {
                for b in 0..dim {
                    if a != b {
                        let mut d = vec![0.0; dim];
                        d[a] = 1.0;
                        d[b] = -1.0;
                        out.push(d);
                    }
                }
            }
            out
        }
    };
    for i in 0..v.len() {
        for d in &directions {
            for sign in [-1.0, 1.0] {
                let mut w = v.clone();
                for (x, dk) in w.row_mut(i).iter_mut().zip(d) {
                    *x += sign * step * dk;
                }
                if feasible.violation(&w) > 0.0 {
                    continue;
                }
                let f = objective(stats, &w);
                if f < base - tol {
                    return Err(Error::OracleUncertified(format!(
                        "moving vertex {i} by {step} lowers the objective from {base} to {f}"
                    )));
                }
            }
        }
    }
    Ok(())
}

pub fn oracle_solve(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    alpha: f64,
    spec: &LossSpec,
    config: &OracleConfig,
) -> Result<Labeling> {
    let n = graph.n_vertices();
    let dim = dataset.dim_y();
    if n * dim > MAX_UNKNOWNS {
        return invalid(format!("oracle is limited to n * dim(Y) <= {MAX_UNKNOWNS}, got {}", n * dim));
    }
    if !(alpha >= 0.0) {
        return invalid("alpha must be >= 0");
    }
    if !(config.tol > 0.0) || config.grid_resolution < 3 || !(config.pg_step > 0.0) {
        return invalid("oracle config needs tol > 0, grid_resolution >= 3 and pg_step > 0");
    }
    if partition.n_vertices() != n {
        return invalid("partition and graph disagree on the vertex count");
    }
    let stats = CellStats::new(partition, dataset, spec)?;
    let space = dataset.output_space();
    let feasible = Feasible { graph, space, alpha };

    let v = if alpha == 0.0 {
        Rows::repeat(&stats.global_mean(), n)
    } else if stats.mass.iter().all(|&m| m > 0.0) {
        feasible.project(&stats.cell_means(), &stats.mass, config.max_sweeps)
    } else {
        // Projected gradient in the Euclidean metric.
        let max_mass = stats.mass.iter().copied().fold(0.0, f64::max);
        let step = config.pg_step / (2.0 * max_mass);
        let unit = vec![1.0; n];
        let mut v = feasible.project(&stats.cell_means(), &unit, config.max_sweeps);
        let mut g = vec![0.0; dim];
        for _ in 0..config.pg_iters {
            let mut moved = v.clone();
            for i in 0..n {
                stats.grad_into(i, v.row(i), &mut g);
                for (x, gk) in moved.row_mut(i).iter_mut().zip(&g) {
                    *x -= step * gk;
                }
            }
            let next = feasible.project(&moved, &unit, config.max_sweeps);
            let change = next.max_abs_diff(&v);
            v = next;
            if change < 1e-15 {
                break;
            }
        }
        v
    };

    let violation = feasible.violation(&v);
    if violation > config.tol {
        return Err(Error::OracleUncertified(format!("answer violates the constraints by {violation}")));
    }
    let lip = graph_lipschitz(graph, &v)?;
    if lip > alpha + config.tol {
        return Err(Error::OracleUncertified(format!("answer has Lipschitz constant {lip} > {alpha}")));
    }
    let spacing = 1.0 / (config.grid_resolution - 1) as f64;
    grid_neighbour_certificate(&stats, &feasible, &v, spacing, config.tol)?;
    grid_neighbour_certificate(&stats, &feasible, &v, spacing.powi(3), config.tol)?;
    if dim == 1 {
        if let Some(grid) = grid_search(&stats, &feasible, config.grid_resolution) {
            let (fg, fv) = (objective(&stats, &grid), objective(&stats, &v));
            if fg < fv - config.tol {
                return Err(Error::OracleUncertified(format!(
                    "grid search found objective {fg} below the projection's {fv}"
                )));
            }
            let final_spacing = spacing.powi(3) * 16.0;
            // The best grid point can sit a spacing away from the optimum,
            // which costs up to |grad| h sqrt(n) + max curvature n h^2.
            let mut g = [0.0];
            let (mut grad2, mut curv) = (0.0, 0.0f64);
            for i in 0..n {
                stats.grad_into(i, v.row(i), &mut g);
                grad2 += g[0] * g[0];
                curv = curv.max(stats.curvature(i));
            }
            let h = final_spacing;
            let slack = config.tol + grad2.sqrt() * h * (n as f64).sqrt() + curv * n as f64 * h * h;
            if grid.max_abs_diff(&v) > 4.0 * final_spacing.max(config.tol) && (fg - fv).abs() > slack {
                return Err(Error::OracleUncertified(format!(
                    "grid search and projection disagree: objectives {fg} and {fv}"
                )));
            }
        }
    }
    Ok(Labeling(v))
}
