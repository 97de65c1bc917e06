//! Sample loss, its gradient, and the partition-weighted empirical loss.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, OutputSpace};
use crate::error::{invalid, Result};
use crate::graph::DatasetPartition;
use crate::rows::Rows;

/// Per-vertex outputs v_1..v_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Labeling(pub Rows);

impl Labeling {
    pub fn constant(value: &[f64], n: usize) -> Self {
        Self(Rows::repeat(value, n))
    }

    pub fn into_rows(self) -> Rows {
        self.0
    }

    pub fn validate(&self, space: &OutputSpace) -> Result<()> {
        for (i, v) in self.0.iter().enumerate() {
            if !space.contains(v) {
                return invalid(format!("labeling row {i} lies outside the output space"));
            }
        }
        Ok(())
    }
}

impl Deref for Labeling {
    type Target = Rows;

    fn deref(&self) -> &Rows {
        &self.0
    }
}

impl DerefMut for Labeling {
    fn deref_mut(&mut self) -> &mut Rows {
        &mut self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// l(v, y) = |v - y|^2
    #[default]
    Squared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    /// sup over Y x Y of |grad_1 l|.
    pub lipschitz_const: f64,
}

impl LossSpec {
    /// Squared loss with the certified constant 2 * diam(Y).
    pub fn squared(space: &OutputSpace) -> Self {
        Self {
            kind: LossKind::Squared,
            lipschitz_const: 2.0 * space.diameter(),
        }
    }
}

fn check_dims(v: &[f64], y: &[f64]) -> Result<()> {
    if v.len() != y.len() {
        return invalid(format!("output of length {} vs label of length {}", v.len(), y.len()));
    }
    Ok(())
}

#[inline]
pub(crate) fn loss_unchecked(kind: LossKind, v: &[f64], y: &[f64]) -> f64 {
    match kind {
        LossKind::Squared => v.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum(),
    }
}

pub fn sample_loss(v: &[f64], y: &[f64], spec: &LossSpec) -> Result<f64> {
    check_dims(v, y)?;
    Ok(loss_unchecked(spec.kind, v, y))
}

pub fn sample_loss_grad(v: &[f64], y: &[f64], spec: &LossSpec) -> Result<Vec<f64>> {
    check_dims(v, y)?;
    Ok(match spec.kind {
        LossKind::Squared => v.iter().zip(y).map(|(a, b)| 2.0 * (a - b)).collect(),
    })
}

fn check_shapes(partition: &DatasetPartition, dataset: &LabeledDataset, labeling: &Rows) -> Result<()> {
    if partition.n_samples() != dataset.len() {
        return invalid("partition and dataset disagree on the sample count");
    }
    if labeling.len() != partition.n_vertices() {
        return invalid(format!(
            "labeling has {} rows for {} vertices",
            labeling.len(),
            partition.n_vertices()
        ));
    }
    if labeling.dim() != dataset.dim_y() {
        return invalid("labeling and dataset outputs differ in dimension");
    }
    Ok(())
}

/// sum_i sum_{s in W_i} theta_is * l(v_i, y_s)
pub fn empirical_loss(
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    labeling: &Rows,
    spec: &LossSpec,
) -> Result<f64> {
    check_shapes(partition, dataset, labeling)?;
    let mut total = 0.0;
    for (i, cell) in partition.cells().iter().enumerate() {
        let v = labeling.row(i);
        let mut acc = 0.0;
        for &(s, theta) in cell {
            acc += theta * loss_unchecked(spec.kind, v, dataset.output(s));
        }
        total += acc;
    }
    Ok(total)
}

/// Per-vertex sufficient statistics of the squared loss: cell mass m_i,
/// weighted label sum S_i and weighted second moment Q_i, so that the cell
/// loss is m_i |v_i|^2 - 2 v_i . S_i + Q_i.
#[derive(Debug, Clone)]
pub(crate) struct CellStats {
    pub mass: Vec<f64>,
    pub sums: Rows,
    pub second: Vec<f64>,
    pub kind: LossKind,
}

impl CellStats {
    pub fn new(partition: &DatasetPartition, dataset: &LabeledDataset, spec: &LossSpec) -> Result<Self> {
        if partition.n_samples() != dataset.len() {
            return invalid("partition and dataset disagree on the sample count");
        }
        let n = partition.n_vertices();
        let dim = dataset.dim_y();
        let mut mass = vec![0.0; n];
        let mut sums = Rows::zeros(n, dim);
        let mut second = vec![0.0; n];
        for (i, cell) in partition.cells().iter().enumerate() {
            for &(s, theta) in cell {
                let y = dataset.output(s);
                mass[i] += theta;
                for (acc, v) in sums.row_mut(i).iter_mut().zip(y) {
                    *acc += theta * v;
                }
                second[i] += theta * y.iter().map(|v| v * v).sum::<f64>();
            }
        }
        Ok(Self {
            mass,
            sums,
            second,
            kind: spec.kind,
        })
    }

    pub fn n(&self) -> usize {
        self.mass.len()
    }

    pub fn dim(&self) -> usize {
        self.sums.dim()
    }

    /// Gradient of the cell loss at v_i, written to `out`.
    #[inline]
    pub fn grad_into(&self, i: usize, v: &[f64], out: &mut [f64]) {
        match self.kind {
            LossKind::Squared => {
                let m = self.mass[i];
                for ((o, x), s) in out.iter_mut().zip(v).zip(self.sums.row(i)) {
                    *o = 2.0 * (m * x - s);
                }
            }
        }
    }

    /// Upper bound on the cell-loss Hessian at vertex i.
    #[inline]
    pub fn curvature(&self, i: usize) -> f64 {
        match self.kind {
            LossKind::Squared => 2.0 * self.mass[i],
        }
    }

    pub fn cell_loss(&self, i: usize, v: &[f64]) -> f64 {
        match self.kind {
            LossKind::Squared => {
                let m = self.mass[i];
                let vv: f64 = v.iter().map(|x| x * x).sum();
                let vs: f64 = v.iter().zip(self.sums.row(i)).map(|(a, b)| a * b).sum();
                (m * vv - 2.0 * vs + self.second[i]).max(0.0)
            }
        }
    }

    pub fn loss(&self, labeling: &Rows) -> f64 {
        (0..self.n()).map(|i| self.cell_loss(i, labeling.row(i))).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass.iter().sum()
    }

    /// Mass-weighted mean of all labels.
    pub fn global_mean(&self) -> Vec<f64> {
        let total = self.total_mass();
        let mut mean = vec![0.0; self.dim()];
        for i in 0..self.n() {
            for (m, s) in mean.iter_mut().zip(self.sums.row(i)) {
                *m += s;
            }
        }
        mean.iter_mut().for_each(|m| *m /= total);
        mean
    }

    /// Per-cell label means; empty cells take the global mean.
    pub fn cell_means(&self) -> Rows {
        let global = self.global_mean();
        let mut out = Rows::zeros(self.n(), self.dim());
        for i in 0..self.n() {
            let row = out.row_mut(i);
            if self.mass[i] > 0.0 {
                for (o, s) in row.iter_mut().zip(self.sums.row(i)) {
                    *o = s / self.mass[i];
                }
            } else {
                row.copy_from_slice(&global);
            }
        }
        out
    }
}
