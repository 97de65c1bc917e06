use crate::data::{LabeledDataset, OutputSpace};
use crate::error::{invalid, Result};
use crate::graph::{DatasetPartition, Graph};
use crate::loss::{CellStats, LossSpec};
use crate::rows::Rows;

/// Flattened view of one constrained instance used by the iteration loops.
#[derive(Debug, Clone)]
pub(crate) struct Problem {
    pub stats: CellStats,
    pub space: OutputSpace,
    pub alpha: f64,
    pub ends: Vec<(usize, usize)>,
    pub weight: Vec<f64>,
    /// |X_i - X_j|^2 per edge
    pub len2: Vec<f64>,
    pub project: bool,
    /// Twice the mass of a single sample; lower bound for preconditioners.
    pub curvature_floor: f64,
}

impl Problem {
    pub fn new(
        graph: &Graph,
        partition: &DatasetPartition,
        dataset: &LabeledDataset,
        alpha: f64,
        spec: &LossSpec,
        project: bool,
    ) -> Result<Self> {
        if !(alpha >= 0.0) || !alpha.is_finite() {
            return invalid(format!("alpha must be finite and >= 0, got {alpha}"));
        }
        if partition.n_vertices() != graph.n_vertices() {
            return invalid("partition and graph disagree on the vertex count");
        }
        let stats = CellStats::new(partition, dataset, spec)?;
        let edges = graph.edges();
        Ok(Self {
            stats,
            space: dataset.output_space().clone(),
            alpha,
            ends: edges.iter().map(|e| (e.i, e.j)).collect(),
            weight: edges.iter().map(|e| e.weight).collect(),
            len2: edges.iter().map(|e| e.length * e.length).collect(),
            project,
            curvature_floor: 2.0 * partition.total_mass() / dataset.len() as f64,
        })
    }

    pub fn n(&self) -> usize {
        self.stats.n()
    }

    pub fn dim(&self) -> usize {
        self.stats.dim()
    }

    pub fn n_edges(&self) -> usize {
        self.ends.len()
    }

    pub fn check_labeling(&self, v: &Rows) -> Result<()> {
        if v.len() != self.n() || v.dim() != self.dim() {
            return invalid(format!(
                "labeling is {}x{}, expected {}x{}",
                v.len(),
                v.dim(),
                self.n(),
                self.dim()
            ));
        }
        Ok(())
    }

    /// |v_i - v_j|^2 - alpha^2 |X_i - X_j|^2 for edge e.
    #[inline]
    pub fn constraint(&self, v: &Rows, e: usize) -> f64 {
        let (i, j) = self.ends[e];
        let dv2: f64 = v.row(i).iter().zip(v.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        dv2 - self.alpha * self.alpha * self.len2[e]
    }

    pub fn lagrangian(&self, v: &Rows, lambda: &[f64]) -> f64 {
        let penalty: f64 = (0..self.n_edges())
            .map(|e| lambda[e] * self.weight[e] * self.constraint(v, e))
            .sum();
        self.stats.loss(v) + penalty
    }

    /// Exact gradient of the Lagrangian in v. When `curvature` is given it
    /// receives a per-vertex bound on the diagonal of the Hessian.
    pub fn gradient(&self, v: &Rows, lambda: &[f64], grad: &mut Rows, mut curvature: Option<&mut [f64]>) {
        for i in 0..self.n() {
            self.stats.grad_into(i, v.row(i), grad.row_mut(i));
        }
        if let Some(c) = curvature.as_deref_mut() {
            for (i, ci) in c.iter_mut().enumerate() {
                *ci = self.stats.curvature(i);
            }
        }
        let dim = self.dim();
        for e in 0..self.n_edges() {
            let s = 2.0 * lambda[e] * self.weight[e];
            if s == 0.0 {
                continue;
            }
            let (i, j) = self.ends[e];
            let flat = grad.as_flat_mut();
            let vf = v.as_flat();
            for k in 0..dim {
                let f = s * (vf[i * dim + k] - vf[j * dim + k]);
                flat[i * dim + k] += f;
                flat[j * dim + k] -= f;
            }
            if let Some(c) = curvature.as_deref_mut() {
                c[i] += s;
                c[j] += s;
            }
        }
    }

    /// Projected-gradient residual max_i |v_i - P_Y(v_i - g_i)|, or the
    /// plain gradient norm when `projected` is false.
    pub fn stationarity(&self, v: &Rows, grad: &Rows, projected: bool) -> f64 {
        self.stationarity_of_row(v, grad, projected)
    }

    /// Same residual for an arbitrary set of rows.
    pub fn stationarity_of_row(&self, v: &Rows, grad: &Rows, projected: bool) -> f64 {
        let mut worst: f64 = 0.0;
        let mut buf = vec![0.0; self.dim()];
        for i in 0..v.len() {
            let (vi, gi) = (v.row(i), grad.row(i));
            if projected {
                for ((b, x), g) in buf.iter_mut().zip(vi).zip(gi) {
                    *b = x - g;
                }
                self.space.project(&mut buf);
                for (x, b) in vi.iter().zip(&buf) {
                    worst = worst.max((x - b).abs());
                }
            } else {
                worst = gi.iter().fold(worst, |w, g| w.max(g.abs()));
            }
        }
        worst
    }
}
