//! Lipschitz-constrained empirical loss minimization on a graph.
//!
//! The problem
//!
//! ```text
//! min_v  sum_i sum_{s in W_i} theta_is l(v_i, y_s)
//! s.t.   |v_i - v_j| <= alpha |X_i - X_j|   for every edge (i, j)
//! ```
//!
//! is solved through its Lagrangian with one nonnegative multiplier per
//! undirected edge. The result carries a KKT certificate.

mod dynamics;
mod problem;

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub(crate) use dynamics::{dynamics_registry, Workspace};
pub(crate) use problem::Problem;

use crate::data::LabeledDataset;
use crate::error::{invalid, Error, Result};
use crate::graph::{graph_lipschitz, DatasetPartition, Graph};
use crate::loss::{Labeling, LossSpec};
use crate::rows::Rows;

/// Lagrangian values beyond this are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// One multiplier per undirected edge, indexed like `Graph::edges`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<EdgeMultiplier>", try_from = "Vec<EdgeMultiplier>")]
pub struct DualEdgeState {
    ends: Vec<(usize, usize)>,
    multipliers: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdgeMultiplier {
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
}

impl DualEdgeState {
    pub fn zeros(graph: &Graph) -> Self {
        Self {
            ends: graph.edges().iter().map(|e| (e.i, e.j)).collect(),
            multipliers: vec![0.0; graph.n_edges()],
        }
    }

    pub fn from_values(graph: &Graph, multipliers: Vec<f64>) -> Result<Self> {
        if multipliers.len() != graph.n_edges() {
            return invalid(format!("{} multipliers for {} edges", multipliers.len(), graph.n_edges()));
        }
        if let Some(bad) = multipliers.iter().find(|l| !(**l >= 0.0)) {
            return invalid(format!("negative or NaN multiplier {bad}"));
        }
        let mut s = Self::zeros(graph);
        s.multipliers = multipliers;
        Ok(s)
    }

    pub fn values(&self) -> &[f64] {
        &self.multipliers
    }

    pub fn len(&self) -> usize {
        self.multipliers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.multipliers.is_empty()
    }

    /// lambda_ij for either orientation, if (i, j) is an edge.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let key = (i.min(j), i.max(j));
        self.ends
            .binary_search(&key)
            .ok()
            .map(|e| self.multipliers[e])
    }

    pub fn min(&self) -> f64 {
        self.multipliers.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.multipliers.iter().copied().fold(0.0, f64::max)
    }

    fn matches(&self, graph: &Graph) -> bool {
        self.ends.len() == graph.n_edges()
            && self.ends.iter().zip(graph.edges()).all(|(&(i, j), e)| i == e.i && j == e.j)
    }
}

impl From<DualEdgeState> for Vec<EdgeMultiplier> {
    fn from(s: DualEdgeState) -> Self {
        s.ends
            .iter()
            .zip(&s.multipliers)
            .map(|(&(i, j), &lambda)| EdgeMultiplier { i, j, lambda })
            .collect()
    }
}

impl TryFrom<Vec<EdgeMultiplier>> for DualEdgeState {
    type Error = Error;

    fn try_from(list: Vec<EdgeMultiplier>) -> Result<Self> {
        let mut ends = Vec::with_capacity(list.len());
        let mut multipliers = Vec::with_capacity(list.len());
        for m in list {
            if m.i >= m.j {
                return invalid(format!("multiplier edge ({}, {}) must have i < j", m.i, m.j));
            }
            if !(m.lambda >= 0.0) {
                return invalid(format!("negative multiplier on edge ({}, {})", m.i, m.j));
            }
            if let Some(&last) = ends.last() {
                if last >= (m.i, m.j) {
                    return invalid("multiplier edges must be sorted and unique");
                }
            }
            ends.push((m.i, m.j));
            multipliers.push(m.lambda);
        }
        Ok(Self { ends, multipliers })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    #[default]
    Constant,
    /// h(k) = h0 / (1 + gamma k)
    Diminishing { gamma: f64 },
}

impl StepSchedule {
    pub fn at(&self, h0: f64, k: usize) -> f64 {
        match *self {
            Self::Constant => h0,
            Self::Diminishing { gamma } => h0 / (1.0 + gamma * k as f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimalInit {
    /// Per-cell label means; empty cells take the global mean.
    #[default]
    CellMeans,
    /// Independent uniform draws from the output space, seeded.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Primal step h0.
    pub step_size: f64,
    pub step_schedule: StepSchedule,
    /// Update rule: "extragradient" (default), "scaled" or "plain".
    pub dynamics: String,
    /// Dual step as a multiple of the primal step.
    pub dual_step_ratio: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
    pub kkt_tol: f64,
    /// Iterations between certificate checks.
    pub check_every: usize,
    pub project_to_y: bool,
    pub init: PrimalInit,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            step_schedule: StepSchedule::Constant,
            dynamics: "extragradient".into(),
            dual_step_ratio: 0.2,
            max_iters: 1_000_000,
            primal_tol: 1e-13,
            dual_tol: 1e-13,
            kkt_tol: 1e-6,
            check_every: 20,
            project_to_y: true,
            init: PrimalInit::CellMeans,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return invalid("step_size must be positive");
        }
        if !(self.dual_step_ratio > 0.0) || !self.dual_step_ratio.is_finite() {
            return invalid("dual_step_ratio must be positive");
        }
        if let StepSchedule::Diminishing { gamma } = self.step_schedule {
            if !(gamma >= 0.0) {
                return invalid("diminishing schedule needs gamma >= 0");
            }
        }
        for (name, t) in [
            ("primal_tol", self.primal_tol),
            ("dual_tol", self.dual_tol),
            ("kkt_tol", self.kkt_tol),
        ] {
            if !(t > 0.0) {
                return invalid(format!("{name} must be positive"));
            }
        }
        if self.max_iters < 1 || self.check_every < 1 {
            return invalid("max_iters and check_every must be at least 1");
        }
        Ok(())
    }
}

/// Discrete KKT residuals of a primal-dual pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KktReport {
    /// max_e (|v_i - v_j|^2 - alpha^2 |X_i - X_j|^2)^+
    pub max_feasibility_violation: f64,
    pub min_dual: f64,
    /// max_e lambda_e |(|v_i - v_j|^2 - alpha^2 |X_i - X_j|^2)|
    pub max_comp_slack: f64,
    pub stationarity_residual: f64,
    pub tol: f64,
    pub pass: bool,
}

impl KktReport {
    fn new(feas: f64, min_dual: f64, slack: f64, stat: f64, tol: f64) -> Self {
        let pass = feas <= tol && min_dual >= -tol && slack <= tol && stat <= tol;
        Self {
            max_feasibility_violation: feas,
            min_dual,
            max_comp_slack: slack,
            stationarity_residual: stat,
            tol,
            pass,
        }
    }

    pub fn worst(&self) -> f64 {
        self.max_feasibility_violation
            .max(-self.min_dual)
            .max(self.max_comp_slack)
            .max(self.stationarity_residual)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub alpha: f64,
    pub labeling: Labeling,
    pub duals: DualEdgeState,
    pub iterations: usize,
    /// Empirical loss J of the returned labeling.
    pub loss: f64,
    pub lagrangian: f64,
    /// Max edge ratio of the returned labeling.
    pub lipschitz: f64,
    pub kkt: KktReport,
    pub converged: bool,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

fn check_graph_duals(graph: &Graph, duals: &DualEdgeState) -> Result<()> {
    if !duals.matches(graph) {
        return invalid("dual state does not match the graph's edge list");
    }
    Ok(())
}

pub fn lagrangian(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    labeling: &Rows,
    duals: &DualEdgeState,
    alpha: f64,
    spec: &LossSpec,
) -> Result<f64> {
    let p = Problem::new(graph, partition, dataset, alpha, spec, false)?;
    p.check_labeling(labeling)?;
    check_graph_duals(graph, duals)?;
    Ok(p.lagrangian(labeling, duals.values()))
}

/// Gradient of the Lagrangian with respect to every v_i.
pub fn primal_grad(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    labeling: &Rows,
    duals: &DualEdgeState,
    spec: &LossSpec,
) -> Result<Rows> {
    let p = Problem::new(graph, partition, dataset, 0.0, spec, false)?;
    p.check_labeling(labeling)?;
    check_graph_duals(graph, duals)?;
    let mut g = Rows::zeros(labeling.len(), labeling.dim());
    p.gradient(labeling, duals.values(), &mut g, None);
    Ok(g)
}

/// Per edge: (1/2) w_ij (|v_i - v_j|^2 - alpha^2 |X_i - X_j|^2).
pub fn dual_grad(graph: &Graph, labeling: &Rows, alpha: f64) -> Result<Vec<f64>> {
    if labeling.len() != graph.n_vertices() {
        return invalid(format!(
            "labeling has {} rows for {} vertices",
            labeling.len(),
            graph.n_vertices()
        ));
    }
    if !(alpha >= 0.0) {
        return invalid("alpha must be >= 0");
    }
    Ok(graph
        .edges()
        .iter()
        .map(|e| {
            let dv2: f64 = labeling
                .row(e.i)
                .iter()
                .zip(labeling.row(e.j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            0.5 * e.weight * (dv2 - alpha * alpha * e.length * e.length)
        })
        .collect())
}

fn is_constant(v: &Rows) -> bool {
    let first = v.row(0);
    v.iter().all(|r| r == first)
}

pub(crate) fn kkt_of(problem: &Problem, v: &Rows, lambda: &[f64], tol: f64, projected: bool) -> KktReport {
    let mut feas: f64 = 0.0;
    let mut slack: f64 = 0.0;
    for e in 0..problem.n_edges() {
        let c = problem.constraint(v, e);
        feas = feas.max(c);
        slack = slack.max(lambda[e] * c.abs());
    }
    let min_dual = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    let min_dual = if min_dual.is_finite() { min_dual } else { 0.0 };
    let mut grad = Rows::zeros(v.len(), v.dim());
    problem.gradient(v, lambda, &mut grad, None);
    let stat = if problem.alpha == 0.0 && is_constant(v) {
        // With alpha = 0 the constraints pin v to the constant subspace and no
        // finite multipliers exist; stationarity is measured on that subspace.
        let mut total = Rows::zeros(1, v.dim());
        for g in grad.iter() {
            for (t, x) in total.row_mut(0).iter_mut().zip(g) {
                *t += x;
            }
        }
        let common = Rows::from_flat(v.dim(), v.row(0).to_vec()).expect("one row");
        problem.stationarity_of_row(&common, &total, projected)
    } else {
        problem.stationarity(v, &grad, projected)
    };
    KktReport::new(feas, min_dual, slack, stat, tol)
}

/// Certificate for a primal-dual pair. Stationarity uses the projected
/// gradient residual when every v_i lies in the output space, and the plain
/// gradient norm otherwise.
#[allow(clippy::too_many_arguments)]
pub fn check_kkt(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    labeling: &Rows,
    duals: &DualEdgeState,
    alpha: f64,
    spec: &LossSpec,
    tol: f64,
) -> Result<KktReport> {
    if !(tol > 0.0) {
        return invalid("tol must be positive");
    }
    let p = Problem::new(graph, partition, dataset, alpha, spec, false)?;
    p.check_labeling(labeling)?;
    check_graph_duals(graph, duals)?;
    let inside = labeling.iter().all(|v| p.space.contains(v));
    Ok(kkt_of(&p, labeling, duals.values(), tol, inside))
}

fn initial_labeling(problem: &Problem, config: &SolverConfig) -> Rows {
    match config.init {
        PrimalInit::CellMeans => problem.stats.cell_means(),
        PrimalInit::Random => {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            let mut v = Rows::zeros(problem.n(), problem.dim());
            for row in v.iter_mut() {
                match &problem.space {
                    crate::data::OutputSpace::Simplex { .. } => {
                        // Normalized exponentials are uniform on the simplex.
                        for x in row.iter_mut() {
                            *x = -(1.0 - rng.gen::<f64>()).ln();
                        }
                        let s: f64 = row.iter().sum();
                        row.iter_mut().for_each(|x| *x /= s);
                    }
                    crate::data::OutputSpace::Box { lower, upper } => {
                        for ((x, l), u) in row.iter_mut().zip(lower).zip(upper) {
                            *x = rng.gen_range(*l..=*u);
                        }
                    }
                }
            }
            v
        }
    }
}

pub fn solve_lipschitz_constrained(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    alpha: f64,
    spec: &LossSpec,
    config: &SolverConfig,
) -> Result<SolveReport> {
    solve_from(graph, partition, dataset, alpha, spec, config, None)
}

/// Like [`solve_lipschitz_constrained`] but optionally warm-started from a
/// previous primal-dual pair.
pub fn solve_from(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    alpha: f64,
    spec: &LossSpec,
    config: &SolverConfig,
    warm: Option<(&Rows, &DualEdgeState)>,
) -> Result<SolveReport> {
    config.validate()?;
    let dynamics = dynamics_registry().create(&config.dynamics)?;
    let problem = Problem::new(graph, partition, dataset, alpha, spec, config.project_to_y)?;
    let (v0, l0) = match warm {
        Some((v, l)) => {
            problem.check_labeling(v)?;
            check_graph_duals(graph, l)?;
            (v.clone(), l.values().to_vec())
        }
        None => (initial_labeling(&problem, config), vec![0.0; problem.n_edges()]),
    };
    if alpha == 0.0 {
        // Every edge forces v_i = v_j on a connected graph, so the minimizer
        // is the constant map at the global label mean.
        let v = Rows::repeat(&problem.stats.global_mean(), problem.n());
        return finish(&problem, graph, v, vec![0.0; problem.n_edges()], 0, config);
    }
    let mut ws = Workspace::new(v0, l0);
    let tau0 = config.dual_step_ratio * config.step_size;
    let mut k = 0;
    while k < config.max_iters {
        let h = config.step_schedule.at(config.step_size, k);
        let tau = config.step_schedule.at(tau0, k);
        let out = dynamics.step(&problem, &mut ws, h, tau);
        k += 1;
        let stalled = out.primal_change < config.primal_tol && out.dual_change < config.dual_tol;
        if k % config.check_every == 0 || stalled {
            let value = problem.lagrangian(&ws.v, &ws.lambda);
            if !value.is_finite() || value.abs() > DIVERGENCE_LIMIT {
                return Err(Error::Divergence { iteration: k, value });
            }
            if stalled || kkt_of(&problem, &ws.v, &ws.lambda, config.kkt_tol, config.project_to_y).pass {
                break;
            }
        }
    }
    finish(&problem, graph, ws.v, ws.lambda, k, config)
}

fn finish(
    problem: &Problem,
    graph: &Graph,
    v: Rows,
    lambda: Vec<f64>,
    iterations: usize,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let kkt = kkt_of(problem, &v, &lambda, config.kkt_tol, config.project_to_y);
    let loss = problem.stats.loss(&v);
    let lagrangian = problem.lagrangian(&v, &lambda);
    if !lagrangian.is_finite() {
        return Err(Error::Divergence {
            iteration: iterations,
            value: lagrangian,
        });
    }
    let lipschitz = graph_lipschitz(graph, &v)?;
    Ok(SolveReport {
        alpha: problem.alpha,
        labeling: Labeling(v),
        duals: DualEdgeState::from_values(graph, lambda)?,
        iterations,
        loss,
        lagrangian,
        lipschitz,
        converged: kkt.pass,
        kkt,
    })
}
