use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::vertices::VertexSet;
use crate::data::LabeledDataset;
use crate::error::{invalid, Result};

/// Voronoi assignment of samples to vertices with weights theta = 1/N.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetPartition {
    /// Per vertex: (sample index, theta).
    cells: Vec<Vec<(usize, f64)>>,
    /// Per sample: owning vertex.
    assignment: Vec<usize>,
    total_mass: f64,
}

impl DatasetPartition {
    pub fn n_vertices(&self) -> usize {
        self.cells.len()
    }

    pub fn n_samples(&self) -> usize {
        self.assignment.len()
    }

    pub fn cell(&self, i: usize) -> &[(usize, f64)] {
        &self.cells[i]
    }

    pub fn cells(&self) -> &[Vec<(usize, f64)>] {
        &self.cells
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    /// Sum of theta over cell `i`.
    pub fn mass(&self, i: usize) -> f64 {
        self.cells[i].iter().map(|c| c.1).sum()
    }

    pub fn is_empty_cell(&self, i: usize) -> bool {
        self.cells[i].is_empty()
    }
}

/// Assigns each sample to its nearest vertex (lowest index on ties).
pub fn partition_dataset(vertices: &VertexSet, dataset: &LabeledDataset) -> Result<DatasetPartition> {
    if vertices.dim() != dataset.dim_x() {
        return invalid(format!(
            "vertices live in R^{} but samples in R^{}",
            vertices.dim(),
            dataset.dim_x()
        ));
    }
    let n_samples = dataset.len();
    let assignment: Vec<usize> = (0..n_samples)
        .into_par_iter()
        .map(|s| vertices.nearest(dataset.input(s)))
        .collect();
    let theta = 1.0 / n_samples as f64;
    let mut cells = vec![Vec::new(); vertices.len()];
    for (s, &i) in assignment.iter().enumerate() {
        cells[i].push((s, theta));
    }
    let total_mass = cells.iter().flatten().map(|c| c.1).sum();
    Ok(DatasetPartition {
        cells,
        assignment,
        total_mass,
    })
}
