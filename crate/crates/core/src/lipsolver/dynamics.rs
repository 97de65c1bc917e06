//! Update rules for one primal-dual iteration.

use super::problem::Problem;
use crate::registry::Registry;
use crate::rows::Rows;

/// Iterate plus scratch buffers reused across iterations.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    pub v: Rows,
    pub lambda: Vec<f64>,
    grad: Rows,
    constraint: Vec<f64>,
    primal_scale: Vec<f64>,
    dual_scale: Vec<f64>,
    half_v: Rows,
    half_lambda: Vec<f64>,
}

impl Workspace {
    pub fn new(v: Rows, lambda: Vec<f64>) -> Self {
        let (n, dim, m) = (v.len(), v.dim(), lambda.len());
        Self {
            grad: Rows::zeros(n, dim),
            constraint: vec![0.0; m],
            primal_scale: vec![0.0; n],
            dual_scale: vec![0.0; m],
            half_v: v.clone(),
            half_lambda: lambda.clone(),
            v,
            lambda,
        }
    }
}

/// Largest change of the primal and of the dual iterate in one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct StepOutcome {
    pub primal_change: f64,
    pub dual_change: f64,
}

pub(crate) trait Dynamics: Send + Sync {
    fn step(&self, problem: &Problem, ws: &mut Workspace, h: f64, tau: f64) -> StepOutcome;
}

/// The textbook simultaneous iteration
/// v <- P_Y(v - h grad_v L), lambda <- max(0, lambda + tau grad_lambda L).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct PlainDynamics;

/// Diagonally preconditioned simultaneous iteration. The primal step at
/// vertex i is divided by a bound D_i on the Lagrangian's curvature there and
/// each dual step is measured in units of its own constraint scale, so one
/// step size works across graphs, sample sizes and Lipschitz bounds.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ScaledDynamics;

/// Preconditioned extragradient: a trial step, then the real step from the
/// original point using gradients taken at the trial point. Damps the
/// rotation that makes simultaneous gradient play cycle when parts of the
/// Lagrangian are flat (vertices with empty cells).
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct ExtragradientDynamics;

fn evaluate(problem: &Problem, v: &Rows, lambda: &[f64], grad: &mut Rows, constraint: &mut [f64], curvature: Option<&mut [f64]>) {
    problem.gradient(v, lambda, grad, curvature);
    for (e, c) in constraint.iter_mut().enumerate() {
        *c = 0.5 * problem.weight[e] * problem.constraint(v, e);
    }
}

const DUAL_GAIN_CAP: f64 = 100.0;

/// Turns per-vertex curvature bounds (already in `primal_scale`) into step
/// multipliers for both blocks.
fn precondition(problem: &Problem, ws: &mut Workspace, h: f64, tau: f64) {
    for d in &mut ws.primal_scale {
        *d = d.max(problem.curvature_floor);
    }
    let a2 = problem.alpha * problem.alpha;
    for e in 0..problem.n_edges() {
        let (i, j) = problem.ends[e];
        // The multiplier terms speed up the dual near the solution, but left
        // uncapped they make the dual step grow with the multiplier itself.
        let loss_only = problem.stats.curvature(i).min(problem.stats.curvature(j)).max(problem.curvature_floor);
        let d = ws.primal_scale[i].min(ws.primal_scale[j]).min(DUAL_GAIN_CAP * loss_only);
        let unit = d / (problem.weight[e] * a2 * problem.len2[e]);
        ws.dual_scale[e] = tau * unit;
    }
    for d in &mut ws.primal_scale {
        *d = h / *d;
    }
}

#[allow(clippy::too_many_arguments)]
fn advance(
    problem: &Problem,
    from_v: &Rows,
    from_lambda: &[f64],
    grad: &Rows,
    constraint: &[f64],
    primal_scale: &[f64],
    dual_scale: &[f64],
    to_v: &mut Rows,
    to_lambda: &mut [f64],
) -> StepOutcome {
    let mut primal_change: f64 = 0.0;
    for i in 0..problem.n() {
        let row = to_v.row_mut(i);
        for ((x, f), g) in row.iter_mut().zip(from_v.row(i)).zip(grad.row(i)) {
            *x = f - primal_scale[i] * g;
        }
        if problem.project {
            problem.space.project(row);
        }
        for (x, f) in row.iter().zip(from_v.row(i)) {
            primal_change = primal_change.max((x - f).abs());
        }
    }
    let mut dual_change: f64 = 0.0;
    for e in 0..problem.n_edges() {
        let next = (from_lambda[e] + dual_scale[e] * constraint[e]).max(0.0);
        dual_change = dual_change.max((next - from_lambda[e]).abs());
        to_lambda[e] = next;
    }
    StepOutcome {
        primal_change,
        dual_change,
    }
}

fn simultaneous(problem: &Problem, ws: &mut Workspace) -> StepOutcome {
    let out = advance(
        problem,
        &ws.v,
        &ws.lambda,
        &ws.grad,
        &ws.constraint,
        &ws.primal_scale,
        &ws.dual_scale,
        &mut ws.half_v,
        &mut ws.half_lambda,
    );
    std::mem::swap(&mut ws.v, &mut ws.half_v);
    std::mem::swap(&mut ws.lambda, &mut ws.half_lambda);
    out
}

impl Dynamics for PlainDynamics {
    fn step(&self, problem: &Problem, ws: &mut Workspace, h: f64, tau: f64) -> StepOutcome {
        evaluate(problem, &ws.v, &ws.lambda, &mut ws.grad, &mut ws.constraint, None);
        ws.primal_scale.iter_mut().for_each(|s| *s = h);
        ws.dual_scale.iter_mut().for_each(|s| *s = tau);
        simultaneous(problem, ws)
    }
}

impl Dynamics for ScaledDynamics {
    fn step(&self, problem: &Problem, ws: &mut Workspace, h: f64, tau: f64) -> StepOutcome {
        evaluate(
            problem,
            &ws.v,
            &ws.lambda,
            &mut ws.grad,
            &mut ws.constraint,
            Some(&mut ws.primal_scale),
        );
        precondition(problem, ws, h, tau);
        simultaneous(problem, ws)
    }
}

impl Dynamics for ExtragradientDynamics {
    fn step(&self, problem: &Problem, ws: &mut Workspace, h: f64, tau: f64) -> StepOutcome {
        evaluate(
            problem,
            &ws.v,
            &ws.lambda,
            &mut ws.grad,
            &mut ws.constraint,
            Some(&mut ws.primal_scale),
        );
        precondition(problem, ws, h, tau);
        advance(
            problem,
            &ws.v,
            &ws.lambda,
            &ws.grad,
            &ws.constraint,
            &ws.primal_scale,
            &ws.dual_scale,
            &mut ws.half_v,
            &mut ws.half_lambda,
        );
        evaluate(
            problem,
            &ws.half_v,
            &ws.half_lambda,
            &mut ws.grad,
            &mut ws.constraint,
            Some(&mut ws.primal_scale),
        );
        for d in &mut ws.primal_scale {
            *d = h / d.max(problem.curvature_floor);
        }
        let base_v = ws.v.clone();
        let base_lambda = ws.lambda.clone();
        advance(
            problem,
            &base_v,
            &base_lambda,
            &ws.grad,
            &ws.constraint,
            &ws.primal_scale,
            &ws.dual_scale,
            &mut ws.v,
            &mut ws.lambda,
        )
    }
}

pub(crate) fn dynamics_registry() -> Registry<dyn Dynamics> {
    let mut r: Registry<dyn Dynamics> = Registry::new("dynamics");
    r.register("plain", || Box::new(PlainDynamics));
    r.register("scaled", || Box::new(ScaledDynamics));
    r.register("extragradient", || Box::new(ExtragradientDynamics));
    r
}
