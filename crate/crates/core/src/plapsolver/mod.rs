//! Smallest Lipschitz constant under a loss margin, by p-seminorm
//! continuation.
//!
//! For a budget B = J*(alpha) + eps the solver minimizes a normalized
//! p-seminorm over labelings with loss <= B for an increasing ladder of p,
//! warm-starting each rung from the previous one. The normalization makes the
//! per-rung value an L^p average of the edge ratios |v_i - v_j| / |X_i - X_j|,
//! so the ladder is monotone in p and tends to the max edge ratio.

mod inner;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub(crate) use inner::SeminormTerms;
use inner::{InnerProblem, InnerSettings};

use crate::data::{LabeledDataset, OutputSpace};
use crate::error::{invalid, Error, Result};
use crate::eval::evaluate;
use crate::graph::{graph_lipschitz, DatasetPartition, Graph};
use crate::lipsolver::{solve_lipschitz_constrained, SolveReport, SolverConfig};
use crate::loss::{CellStats, Labeling, LossSpec};
use crate::rows::{dist, Rows};

/// Loss budget J* + epsilon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarginBudget {
    pub j_star: f64,
    pub epsilon: f64,
}

impl MarginBudget {
    pub fn new(j_star: f64, epsilon: f64) -> Result<Self> {
        if !(j_star >= 0.0) || !(epsilon >= 0.0) {
            return invalid(format!("budget needs J* >= 0 and epsilon >= 0, got {j_star} and {epsilon}"));
        }
        Ok(Self { j_star, epsilon })
    }

    pub fn budget(&self) -> f64 {
        self.j_star + self.epsilon
    }
}

/// Settings for one loss-constrained p-problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PSolverConfig {
    /// Iteration cap for each inner minimization at fixed kappa.
    pub max_inner_iters: usize,
    /// Stationarity target for the inner minimization.
    pub inner_tol: f64,
    /// Cap on multiplier updates.
    pub max_dual_iters: usize,
    /// Allowed |loss - budget| at an active budget.
    pub loss_tol: f64,
    pub kkt_tol: f64,
}

impl Default for PSolverConfig {
    fn default() -> Self {
        Self {
            max_inner_iters: 20_000,
            inner_tol: 1e-8,
            max_dual_iters: 200,
            loss_tol: 1e-8,
            kkt_tol: 1e-6,
        }
    }
}

impl PSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_inner_iters == 0 || self.max_dual_iters == 0 {
            return invalid("iteration caps must be positive");
        }
        if !(self.inner_tol > 0.0 && self.loss_tol > 0.0 && self.kkt_tol > 0.0) {
            return invalid("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationSchedule {
    pub p_values: Vec<f64>,
    /// Solver for the reference problem that fixes J*.
    pub solver: SolverConfig,
    pub inner: PSolverConfig,
}

impl Default for ContinuationSchedule {
    fn default() -> Self {
        Self {
            p_values: vec![2.0, 4.0, 8.0, 16.0, 32.0, 64.0],
            solver: SolverConfig::default(),
            inner: PSolverConfig::default(),
        }
    }
}

impl ContinuationSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.p_values.is_empty() {
            return invalid("p ladder is empty");
        }
        if self.p_values.iter().any(|&p| !(p > 1.0) || !p.is_finite()) {
            return invalid("every p must be finite and > 1");
        }
        if self.p_values.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("p ladder must be strictly increasing");
        }
        self.solver.validate()?;
        self.inner.validate()
    }
}

/// Discrete optimality residuals of a loss-constrained p-problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PKktReport {
    /// (loss - budget)^+
    pub feasibility: f64,
    /// kappa |loss - budget|
    pub comp_slack: f64,
    /// Length of a preconditioned projected-gradient step of the Lagrangian.
    pub stationarity: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PSolution {
    pub labeling: Labeling,
    /// Multiplier of the loss constraint for the normalized objective;
    /// infinite when the budget equals the loss floor.
    pub kappa: f64,
    pub seminorm_norm: f64,
    pub lipschitz: f64,
    pub loss: f64,
    pub iterations: usize,
    pub kkt: PKktReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LadderStep {
    pub p: f64,
    pub seminorm_norm: f64,
    pub lipschitz: f64,
    pub loss: f64,
    pub kappa: f64,
    pub iterations: usize,
    pub kkt_pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobustifyReport {
    pub alpha: f64,
    pub budget: MarginBudget,
    /// Reference solve at alpha.
    pub reference: SolveReport,
    pub steps: Vec<LadderStep>,
    pub labeling: Labeling,
    pub lipschitz: f64,
    pub loss: f64,
}

impl RobustifyReport {
    pub fn converged(&self) -> bool {
        self.reference.converged && self.steps.iter().all(|s| s.kkt_pass)
    }
}

/// (1/p) sum_i sum_{j in N_i} w_ij |v_i - v_j|^p, each edge visited from both ends.
pub fn p_seminorm(graph: &Graph, labeling: &Rows, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return invalid(format!("p must exceed 1, got {p}"));
    }
    if labeling.len() != graph.n_vertices() {
        return invalid("labeling size does not match the graph");
    }
    Ok(graph
        .edges()
        .iter()
        .map(|e| 2.0 * e.weight * dist(labeling.row(e.i), labeling.row(e.j)).powf(p))
        .sum::<f64>()
        / p)
}

/// The graph whose p-seminorm, after taking (p S_p)^(1/p), is the L^p mean of
/// edge ratios |v_i - v_j| / |X_i - X_j| under a probability measure on
/// directed edges (vertex mass 1/n split in proportion to w).
pub fn ratio_graph(graph: &Graph, p: f64) -> Graph {
    let n = graph.n_vertices() as f64;
    let strength: Vec<f64> = (0..graph.n_vertices())
        .map(|i| graph.neighbors(i).iter().map(|&(_, e)| graph.edges()[e].weight).sum())
        .collect();
    graph.reweighted(|e| {
        let mass = e.weight / (n * strength[e.i]) + e.weight / (n * strength[e.j]);
        0.5 * mass / e.length.powf(p)
    })
}

/// (p S_p)^(1/p) on [`ratio_graph`], evaluated without overflow.
pub fn normalized_seminorm(graph: &Graph, labeling: &Rows, p: f64) -> Result<f64> {
    if !(p > 1.0) {
        return invalid(format!("p must exceed 1, got {p}"));
    }
    if labeling.len() != graph.n_vertices() {
        return invalid("labeling size does not match the graph");
    }
    Ok(SeminormTerms::new(graph).value(labeling, p))
}

/// The constant labeling nearest to the center of Y among constants within
/// the budget; `None` when no constant fits.
fn best_constant(stats: &CellStats, space: &OutputSpace, budget: f64) -> Option<Vec<f64>> {
    let mean = stats.global_mean();
    let base = stats.loss(&Rows::repeat(&mean, stats.n()));
    if base > budget {
        return None;
    }
    // loss(c) = base + M |c - mean|^2 for squared loss.
    let radius = ((budget - base) / stats.total_mass()).sqrt();
    let center = space.center();
    let gap = dist(&center, &mean);
    let t = if gap <= radius { 1.0 } else { radius / gap };
    Some(mean.iter().zip(&center).map(|(m, c)| m + t * (c - m)).collect())
}

struct Context<'a> {
    graph: &'a Graph,
    terms: SeminormTerms,
    stats: CellStats,
    space: &'a OutputSpace,
    floor: f64,
}

impl Context<'_> {
    fn inner<'s>(&'s self, p: f64, kappa: f64, fixed: Option<&'s [bool]>) -> InnerProblem<'s> {
        InnerProblem {
            terms: &self.terms,
            stats: &self.stats,
            space: self.space,
            p,
            kappa,
            fixed,
            floor: self.floor,
        }
    }
}

fn lerp_rows(a: &Rows, b: &Rows, t: f64) -> Rows {
    let mut out = a.clone();
    for (o, y) in out.as_flat_mut().iter_mut().zip(b.as_flat()) {
        *o += t * (y - *o);
    }
    out
}

/// Largest t in [0, 1] with loss(a + t (b - a)) <= budget, given
/// loss(a) <= budget < loss(b).
fn budget_crossing(stats: &CellStats, a: &Rows, b: &Rows, budget: f64) -> Option<f64> {
    let q0 = stats.loss(a) - budget;
    let q1 = stats.loss(b) - budget;
    let qh = stats.loss(&lerp_rows(a, b, 0.5)) - budget;
    if !(q0 <= 0.0 && q1 > 0.0) {
        return None;
    }
    let qa = 2.0 * (q1 + q0 - 2.0 * qh);
    let qb = q1 - q0 - qa;
    let mut t = if qa.abs() <= 1e-300 {
        -q0 / qb
    } else {
        let disc = (qb * qb - 4.0 * qa * q0).max(0.0).sqrt();
        // Stable root of qa t^2 + qb t + q0 = 0 lying in [0, 1].
        let r1 = (-qb + disc) / (2.0 * qa);
        let r2 = (-qb - disc) / (2.0 * qa);
        [r1, r2].into_iter().filter(|r| (0.0..=1.0).contains(r)).fold(f64::NAN, f64::max)
    };
    if !t.is_finite() {
        return None;
    }
    // Step back until the rounded loss is on the feasible side.
    let mut back = 1e-12;
    while t > 0.0 {
        if stats.loss(&lerp_rows(a, b, t)) <= budget {
            return Some(t);
        }
        t -= back;
        back *= 2.0;
    }
    Some(0.0)
}

fn solution(ctx: &Context<'_>, p: f64, v: Rows, kappa: f64, budget: f64, iterations: usize, stationarity: f64, cfg: &PSolverConfig) -> Result<PSolution> {
    let loss = ctx.stats.loss(&v);
    let feasibility = (loss - budget).max(0.0);
    let comp_slack = if kappa.is_finite() { kappa * (loss - budget).abs() } else { 0.0 };
    let pass = feasibility <= cfg.kkt_tol && comp_slack <= cfg.kkt_tol && stationarity <= cfg.kkt_tol;
    Ok(PSolution {
        seminorm_norm: ctx.terms.value(&v, p),
        lipschitz: graph_lipschitz(ctx.graph, &v)?,
        loss,
        labeling: Labeling(v),
        kappa,
        iterations,
        kkt: PKktReport {
            feasibility,
            comp_slack,
            stationarity,
            pass,
        },
    })
}

/// Minimizes the normalized p-seminorm subject to loss <= budget.
///
/// The single multiplier kappa is found by a safeguarded root search on the
/// dual derivative loss(v(kappa)) - budget, where v(kappa) minimizes the
/// Lagrangian N_p(v) + kappa (loss(v) - budget) over Y^n. Each inner
/// minimization is warm-started from the closest previous one.
#[allow(clippy::too_many_arguments)]
pub fn solve_p_constrained(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    p: f64,
    budget: MarginBudget,
    spec: &LossSpec,
    config: &PSolverConfig,
    init: &Rows,
) -> Result<PSolution> {
    solve_p_warm(graph, partition, dataset, p, budget, spec, config, init, None)
}

#[allow(clippy::too_many_arguments)]
fn solve_p_warm(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    p: f64,
    budget: MarginBudget,
    spec: &LossSpec,
    config: &PSolverConfig,
    init: &Rows,
    kappa_hint: Option<f64>,
) -> Result<PSolution> {
    if !(p > 1.0) || !p.is_finite() {
        return invalid(format!("p must be finite and > 1, got {p}"));
    }
    config.validate()?;
    let stats = CellStats::new(partition, dataset, spec)?;
    if init.len() != graph.n_vertices() || init.dim() != dataset.dim_y() || stats.n() != graph.n_vertices() {
        return invalid("initial labeling, graph and partition sizes disagree");
    }
    let ctx = Context {
        graph,
        terms: SeminormTerms::new(graph),
        floor: 2.0 * partition.total_mass() / dataset.len() as f64,
        stats,
        space: dataset.output_space(),
    };
    let b = budget.budget();
    let settings = InnerSettings {
        max_iters: config.max_inner_iters,
        tol: config.inner_tol,
    };

    if let Some(c) = best_constant(&ctx.stats, ctx.space, b) {
        let v = Rows::repeat(&c, graph.n_vertices());
        return solution(&ctx, p, v, 0.0, b, 0, 0.0, config);
    }
    let means = ctx.stats.cell_means();
    let floor = ctx.stats.loss(&means);
    if b < floor - config.loss_tol {
        return Err(Error::InfeasibleBudget { budget: b, floor });
    }
    let mut start = init.clone();
    for row in start.iter_mut() {
        ctx.space.project(row);
    }
    if b <= floor + config.loss_tol {
        // Only the loss minimizers fit: occupied cells sit at their means and
        // the remaining vertices take the p-harmonic extension.
        let fixed: Vec<bool> = ctx.stats.mass.iter().map(|&m| m > 0.0).collect();
        for i in 0..start.len() {
            if fixed[i] {
                start.row_mut(i).copy_from_slice(means.row(i));
            }
        }
        let prob = ctx.inner(p, 0.0, Some(&fixed));
        let out = prob.minimize(&mut start, settings);
        return solution(&ctx, p, start, f64::INFINITY, b, out.iterations, out.residual, config);
    }

    // Root search for kappa: g(kappa) = loss(v(kappa)) - b is non-increasing.
    let mut total_iters = 0;
    // Near the root the loss gap is small and inner noise matters, so the
    // inner tolerance tightens there.
    let fine = InnerSettings {
        tol: settings.tol * 1e-2,
        ..settings
    };
    let mut evaluate_at = |kappa: f64, from: &Rows, near: bool| -> (Rows, f64, f64) {
        let mut v = from.clone();
        let out = ctx.inner(p, kappa, None).minimize(&mut v, if near { fine } else { settings });
        total_iters += out.iterations;
        let g = ctx.stats.loss(&v) - b;
        
        (v, g, out.residual)
    };
    // Close enough when both the loss gap and the slackness it causes are small.
    let settled = |kappa: f64, g: f64| g.abs() <= config.loss_tol && kappa * g.abs() <= 0.1 * config.kkt_tol;
    let mut kappa = kappa_hint.filter(|k| k.is_finite() && *k > 0.0).unwrap_or(1.0);
    let (mut v, mut g, mut res) = evaluate_at(kappa, &start, false);
    // Feasible side (g <= 0) and infeasible side (g > 0) of the bracket.
    let mut hi: Option<(f64, Rows, f64, f64)> = None;
    let mut lo: Option<(f64, Rows, f64)> = None;
    let mut rounds = 0;
    loop {
        rounds += 1;
        if g <= 0.0 {
            hi = Some((kappa, v.clone(), g, res));
        } else {
            lo = Some((kappa, v.clone(), g));
        }
        if g <= 0.0 && settled(kappa, g) || rounds >= config.max_dual_iters {
            break;
        }
        if let (Some((kl, ..)), Some((kh, ..))) = (&lo, &hi) {
            if (kh - kl).abs() <= 1e-9 * kh.abs() {
                break;
            }
        }
        let next = match (&lo, &hi) {
            (Some((kl, _, gl)), Some((kh, _, gh, _))) => {
                // Secant in log kappa, kept inside the bracket.
                let (ll, lh) = (kl.ln(), kh.ln());
                let guess = lh - gh * (lh - ll) / (gh - gl);
                let mid = 0.5 * (ll + lh);
                let t = if guess.is_finite() && guess > ll.min(lh) && guess < ll.max(lh) && rounds % 3 != 0 {
                    guess
                } else {
                    mid
                };
                t.exp()
            }
            (None, Some((kh, _, _, _))) => kh / 4.0,
            (Some((kl, _, _)), None) => kl * 4.0,
            (None, None) => unreachable!("one side is always set"),
        };
        // Infeasible iterates can sit at or near a constant labeling, where
        // the seminorm has a kink and progress away from it is very slow, so
        // they are never used as starting points.
        let from = match &hi {
            Some((_, vh, _, _)) => vh.clone(),
            None => start.clone(),
        };
        kappa = next;
        (v, g, res) = evaluate_at(kappa, &from, g.abs() <= 1e3 * config.loss_tol);
        if !kappa.is_finite() || kappa > 1e300 {
            break;
        }
    }
    if let (Some((kl, vl, _)), Some((kh, vh, gh, _))) = (&lo, &hi) {
        if !settled(*kh, *gh) {
            // The two sides straddle the budget; the loss is a convex
            // quadratic along the segment between them, so the point on
            // the segment that meets the budget exactly is found directly.
            if let Some(t) = budget_crossing(&ctx.stats, vh, vl, b) {
                let v = lerp_rows(vh, vl, t);
                let kappa = (kh.ln() + t * (kl.ln() - kh.ln())).exp();
                let res = ctx.inner(p, kappa, None).stationarity(&v);
                return solution(&ctx, p, v, kappa, b, total_iters, res, config);
            }
        }
    }
    match hi {
        Some((k, v, _, r)) => solution(&ctx, p, v, k, b, total_iters, r, config),
        None => solution(&ctx, p, v, kappa, b, total_iters, res, config),
    }
}

/// Runs the p ladder at budget J*(alpha) + epsilon.
#[allow(clippy::too_many_arguments)]
pub fn robustify(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    alpha: f64,
    epsilon: f64,
    spec: &LossSpec,
    schedule: &ContinuationSchedule,
) -> Result<RobustifyReport> {
    schedule.validate()?;
    let reference = solve_lipschitz_constrained(graph, partition, dataset, alpha, spec, &schedule.solver)?;
    let start = reference.labeling.0.clone();
    robustify_from(graph, partition, dataset, reference, epsilon, spec, schedule, &start, None)
}

#[allow(clippy::too_many_arguments)]
fn robustify_from(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    reference: SolveReport,
    epsilon: f64,
    spec: &LossSpec,
    schedule: &ContinuationSchedule,
    start: &Rows,
    kappa_hints: Option<&[f64]>,
) -> Result<RobustifyReport> {
    let budget = MarginBudget::new(reference.loss, epsilon)?;
    let mut current = start.clone();
    let mut steps = Vec::with_capacity(schedule.p_values.len());
    let mut kappa_prev: Option<f64> = None;
    for (k, &p) in schedule.p_values.iter().enumerate() {
        let hint = kappa_hints.and_then(|h| h.get(k).copied()).or(kappa_prev);
        let sol = solve_p_warm(graph, partition, dataset, p, budget, spec, &schedule.inner, &current, hint)?;
        steps.push(LadderStep {
            p,
            seminorm_norm: sol.seminorm_norm,
            lipschitz: sol.lipschitz,
            loss: sol.loss,
            kappa: sol.kappa,
            iterations: sol.iterations,
            kkt_pass: sol.kkt.pass,
        });
        kappa_prev = Some(sol.kappa);
        current = sol.labeling.0;
    }
    let last = steps.last().expect("ladder is non-empty");
    Ok(RobustifyReport {
        alpha: reference.alpha,
        budget,
        lipschitz: last.lipschitz,
        loss: last.loss,
        reference,
        steps,
        labeling: Labeling(current),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffPoint {
    pub epsilon: f64,
    pub lipschitz: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    pub points: Vec<TradeoffPoint>,
    pub reports: Vec<RobustifyReport>,
}

impl TradeoffCurve {
    pub fn converged(&self) -> bool {
        self.reports.iter().all(RobustifyReport::converged)
    }

    /// `epsilon,p,seminorm_norm,lipschitz,loss,kappa`, one row per rung.
    pub fn write_ladder_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epsilon", "p", "seminorm_norm", "lipschitz", "loss", "kappa"])?;
        for (pt, rep) in self.points.iter().zip(&self.reports) {
            for s in &rep.steps {
                w.write_record([
                    pt.epsilon.to_string(),
                    s.p.to_string(),
                    s.seminorm_norm.to_string(),
                    s.lipschitz.to_string(),
                    s.loss.to_string(),
                    s.kappa.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// `epsilon,lipschitz,loss,accuracy,confidence`, one row per epsilon.
    pub fn write_summary_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["epsilon", "lipschitz", "loss", "accuracy", "confidence"])?;
        for pt in &self.points {
            w.write_record([
                pt.epsilon.to_string(),
                pt.lipschitz.to_string(),
                pt.loss.to_string(),
                pt.accuracy.to_string(),
                pt.confidence.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csvs(&self, ladder: &Path, summary: &Path) -> Result<()> {
        self.write_ladder_csv(std::fs::File::create(ladder)?)?;
        self.write_summary_csv(std::fs::File::create(summary)?)
    }
}

/// One robustify run per epsilon, each warm-started from the previous
/// epsilon's result. Accuracy and confidence are measured on `testset`.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_curve(
    graph: &Graph,
    partition: &DatasetPartition,
    dataset: &LabeledDataset,
    alpha: f64,
    epsilons: &[f64],
    spec: &LossSpec,
    schedule: &ContinuationSchedule,
    testset: &LabeledDataset,
) -> Result<TradeoffCurve> {
    schedule.validate()?;
    if epsilons.is_empty() {
        return invalid("epsilon grid is empty");
    }
    if epsilons.iter().any(|e| !(*e >= 0.0)) || epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("epsilon grid must be non-negative and strictly increasing");
    }
    let reference = solve_lipschitz_constrained(graph, partition, dataset, alpha, spec, &schedule.solver)?;
    let mut start = reference.labeling.0.clone();
    let mut hints: Option<Vec<f64>> = None;
    let mut points = Vec::with_capacity(epsilons.len());
    let mut reports = Vec::with_capacity(epsilons.len());
    for &eps in epsilons {
        let rep = robustify_from(
            graph,
            partition,
            dataset,
            reference.clone(),
            eps,
            spec,
            schedule,
            &start,
            hints.as_deref(),
        )?;
        let metrics = evaluate(graph.vertices(), &rep.labeling, testset, spec)?;
        points.push(TradeoffPoint {
            epsilon: eps,
            lipschitz: rep.lipschitz,
            loss: rep.loss,
            accuracy: metrics.accuracy,
            confidence: metrics.mean_confidence,
        });
        // The ladder restarts at p_min, so warm-start from the first rung's
        // neighbourhood: the previous epsilon's final labeling is feasible
        // for the larger budget.
        start = rep.labeling.0.clone();
        hints = Some(rep.steps.iter().map(|s| s.kappa).collect());
        reports.push(rep);
    }
    Ok(TradeoffCurve { points, reports })
}

#[cfg(test)]
mod tests;
