use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const SIMPLEX_TOL: f64 = 1e-9;

/// The convex compact output set Y.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputSpace {
    /// Probability simplex in R^dim (classification).
    Simplex { dim: usize },
    /// Axis-aligned box.
    Box { lower: Vec<f64>, upper: Vec<f64> },
}

impl OutputSpace {
    pub fn simplex(dim: usize) -> Self {
        Self::Simplex { dim }
    }

    pub fn unit_box(dim: usize) -> Self {
        Self::Box {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Simplex { dim } if *dim < 2 => invalid("simplex output space needs dim >= 2"),
            Self::Box { lower, upper } => {
                if lower.is_empty() || lower.len() != upper.len() {
                    return invalid("box bounds must be nonempty and of equal length");
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u)) {
                    return invalid("box lower bound exceeds upper bound");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Simplex { dim } => *dim,
            Self::Box { lower, .. } => lower.len(),
        }
    }

    pub fn is_simplex(&self) -> bool {
        matches!(self, Self::Simplex { .. })
    }

    pub fn contains(&self, y: &[f64]) -> bool {
        if y.len() != self.dim() {
            return false;
        }
        match self {
            Self::Simplex { .. } => {
                y.iter().all(|&v| v >= -SIMPLEX_TOL)
                    && (y.iter().sum::<f64>() - 1.0).abs() <= SIMPLEX_TOL
            }
            Self::Box { lower, upper } => y
                .iter()
                .zip(lower.iter().zip(upper))
                .all(|(&v, (&l, &u))| v >= l - SIMPLEX_TOL && v <= u + SIMPLEX_TOL),
        }
    }

    /// Euclidean projection onto the set, in place.
    pub fn project(&self, v: &mut [f64]) {
        match self {
            Self::Simplex { .. } => project_simplex(v),
            Self::Box { lower, upper } => {
                for ((x, &l), &u) in v.iter_mut().zip(lower).zip(upper) {
                    *x = x.clamp(l, u);
                }
            }
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            Self::Simplex { .. } => std::f64::consts::SQRT_2,
            Self::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(l, u)| (u - l) * (u - l))
                .sum::<f64>()
                .sqrt(),
        }
    }

    /// Barycenter: the uniform distribution for the simplex.
    pub fn center(&self) -> Vec<f64> {
        match self {
            Self::Simplex { dim } => vec![1.0 / *dim as f64; *dim],
            Self::Box { lower, upper } => lower.iter().zip(upper).map(|(l, u)| 0.5 * (l + u)).collect(),
        }
    }
}

/// Sort-based projection onto {x >= 0, sum x = 1}.
pub fn project_simplex(v: &mut [f64]) {
    // Interior fast path: a uniform shift already lands inside the simplex.
    let shift = (v.iter().sum::<f64>() - 1.0) / v.len() as f64;
    if v.iter().all(|&x| x - shift > 0.0) {
        v.iter_mut().for_each(|x| *x -= shift);
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            shift = t;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - shift).max(0.0);
    }
}

/// Axis-aligned bounding box of the input space X.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unit(dim: usize) -> Self {
        Self {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&v, (&l, &u))| v >= l && v <= u)
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, &l), &u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(l, u);
        }
    }
}
