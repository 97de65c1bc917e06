//! Provably robust learning on k-NN graphs.
//!
//! A classifier is a labeling of graph vertices; samples take the output of
//! their nearest vertex. Training minimizes the empirical loss under a hard
//! bound on the graph Lipschitz constant with primal-dual dynamics and
//! certifies the result through discrete KKT residuals. Robustification then
//! trades a loss margin for a smaller Lipschitz constant by p-seminorm
//! continuation.

pub mod data;
mod error;
pub mod eval;
pub mod experiment;
pub mod graph;
pub mod lipsolver;
pub mod loss;
pub mod oracle;
pub mod plapsolver;
pub mod registry;
pub mod rows;

pub use error::{Error, Result};
pub use loss::{Labeling, LossKind, LossSpec};
pub use rows::Rows;
