//! Minimization of N_p(v) + kappa * loss(v) over Y^n for a fixed multiplier.

use crate::data::OutputSpace;
use crate::graph::Graph;
use crate::loss::CellStats;
use crate::rows::Rows;

/// Edge data for the normalized p-seminorm
/// N_p(v) = (sum_e c_e (|v_i - v_j| / d_e)^p)^(1/p),
/// where c_e are probability weights (each vertex carries mass 1/n, spread
/// over its incident edges in proportion to w).
#[derive(Debug, Clone)]
pub(crate) struct SeminormTerms {
    pub ends: Vec<(usize, usize)>,
    pub mass: Vec<f64>,
    pub inv_len: Vec<f64>,
}

impl SeminormTerms {
    pub fn new(graph: &Graph) -> Self {
        let n = graph.n_vertices() as f64;
        let strength: Vec<f64> = (0..graph.n_vertices())
            .map(|i| graph.neighbors(i).iter().map(|&(_, e)| graph.edges()[e].weight).sum())
            .collect();
        let edges = graph.edges();
        Self {
            ends: edges.iter().map(|e| (e.i, e.j)).collect(),
            mass: edges
                .iter()
                .map(|e| e.weight / (n * strength[e.i]) + e.weight / (n * strength[e.j]))
                .collect(),
            inv_len: edges.iter().map(|e| 1.0 / e.length).collect(),
        }
    }

    pub fn ratios(&self, v: &Rows, out: &mut [f64]) -> f64 {
        let mut max: f64 = 0.0;
        for (e, &(i, j)) in self.ends.iter().enumerate() {
            let r = crate::rows::dist(v.row(i), v.row(j)) * self.inv_len[e];
            out[e] = r;
            max = max.max(r);
        }
        max
    }

    /// N_p from precomputed ratios and their maximum, without overflow.
    pub fn value_from(&self, ratios: &[f64], max: f64, p: f64) -> f64 {
        if max == 0.0 {
            return 0.0;
        }
        let sum: f64 = ratios.iter().zip(&self.mass).map(|(r, c)| c * pow(r / max, p)).sum();
        max * sum.powf(1.0 / p)
    }

    pub fn value(&self, v: &Rows, p: f64) -> f64 {
        let mut r = vec![0.0; self.ends.len()];
        let max = self.ratios(v, &mut r);
        self.value_from(&r, max, p)
    }
}

/// x^p with the fast integer path for the usual even ladders.
#[inline]
pub(crate) fn pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() <= 1024.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

const STALL_WINDOW: usize = 500;

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerSettings {
    pub max_iters: usize,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InnerOutcome {
    pub iterations: usize,
    /// Length of a full preconditioned projected-gradient step at the result.
    pub residual: f64,
}

pub(crate) struct InnerProblem<'a> {
    pub terms: &'a SeminormTerms,
    pub stats: &'a CellStats,
    pub space: &'a OutputSpace,
    pub p: f64,
    pub kappa: f64,
    /// Vertices held at their current value.
    pub fixed: Option<&'a [bool]>,
    pub floor: f64,
}

struct Scratch {
    ratios: Vec<f64>,
    grad: Rows,
    curv: Vec<f64>,
    buf: Vec<f64>,
}

impl InnerProblem<'_> {
    fn objective(&self, v: &Rows, s: &mut Scratch) -> f64 {
        let max = self.terms.ratios(v, &mut s.ratios);
        self.terms.value_from(&s.ratios, max, self.p) + self.kappa * self.stats.loss(v)
    }

    /// Gradient and per-vertex curvature bound at v; returns the objective.
    fn gradient(&self, v: &Rows, s: &mut Scratch) -> f64 {
        let dim = v.dim();
        let p = self.p;
        for i in 0..v.len() {
            self.stats.grad_into(i, v.row(i), s.grad.row_mut(i));
            for g in s.grad.row_mut(i) {
                *g *= self.kappa;
            }
            s.curv[i] = self.kappa * self.stats.curvature(i);
        }
        let max = self.terms.ratios(v, &mut s.ratios);
        let loss_part = self.kappa * self.stats.loss(v);
        if max == 0.0 {
            return loss_part;
        }
        let sum: f64 = s
            .ratios
            .iter()
            .zip(&self.terms.mass)
            .map(|(r, c)| c * pow(r / max, p))
            .sum();
        let lead = sum.powf(1.0 / p - 1.0);
        for (e, &(i, j)) in self.terms.ends.iter().enumerate() {
            let r = s.ratios[e];
            if r == 0.0 {
                continue;
            }
            let t = r / max;
            let c = self.terms.mass[e];
            let inv = self.terms.inv_len[e];
            // d N / d v_i = lead * c * t^(p-1) * u / d with u the unit difference.
            let tp2 = pow(t, p - 2.0);
            let coef = lead * c * tp2 * t * inv / (r / inv);
            let flat = s.grad.as_flat_mut();
            let vf = v.as_flat();
            for k in 0..dim {
                let f = coef * (vf[i * dim + k] - vf[j * dim + k]);
                flat[i * dim + k] += f;
                flat[j * dim + k] -= f;
            }
            let bound = 2.0 * (p - 1.0) / max * lead * c * tp2 * inv * inv;
            s.curv[i] += bound;
            s.curv[j] += bound;
        }
        max * sum.powf(1.0 / p) + loss_part
    }

    fn is_fixed(&self, i: usize) -> bool {
        self.fixed.is_some_and(|f| f[i])
    }

    /// Projected step from `from` along the stored gradient, scaled by
    /// step / curvature. Returns the largest coordinate move.
    fn step_into(&self, from: &Rows, step: f64, s: &mut Scratch, to: &mut Rows) -> f64 {
        let mut moved: f64 = 0.0;
        for i in 0..from.len() {
            let row = to.row_mut(i);
            if self.is_fixed(i) {
                row.copy_from_slice(from.row(i));
                continue;
            }
            let scale = step / s.curv[i].max(self.floor);
            for ((x, f), g) in row.iter_mut().zip(from.row(i)).zip(s.grad.row(i)) {
                *x = f - scale * g;
            }
            self.space.project(row);
            for (x, f) in row.iter().zip(from.row(i)) {
                moved = moved.max((x - f).abs());
            }
        }
        moved
    }

    fn residual(&self, v: &Rows, s: &mut Scratch) -> f64 {
        self.gradient(v, s);
        let mut worst: f64 = 0.0;
        for i in 0..v.len() {
            if self.is_fixed(i) {
                continue;
            }
            let scale = 1.0 / s.curv[i].max(self.floor);
            s.buf.clear();
            s.buf.extend(v.row(i).iter().zip(s.grad.row(i)).map(|(x, g)| x - scale * g));
            self.space.project(&mut s.buf);
            for (x, b) in v.row(i).iter().zip(&s.buf) {
                worst = worst.max((x - b).abs());
            }
        }
        worst
    }

    /// Length of one full preconditioned projected-gradient step at `v`.
    pub fn stationarity(&self, v: &Rows) -> f64 {
        let mut s = Scratch {
            ratios: vec![0.0; self.terms.ends.len()],
            grad: Rows::zeros(v.len(), v.dim()),
            curv: vec![0.0; v.len()],
            buf: Vec::with_capacity(v.dim()),
        };
        self.residual(v, &mut s)
    }

    /// Accelerated projected gradient with backtracking and function-value
    /// restarts, starting from and overwriting `v`.
    pub fn minimize(&self, v: &mut Rows, settings: InnerSettings) -> InnerOutcome {
        let (n, dim) = (v.len(), v.dim());
        let mut s = Scratch {
            ratios: vec![0.0; self.terms.ends.len()],
            grad: Rows::zeros(n, dim),
            curv: vec![0.0; n],
            buf: Vec::with_capacity(dim),
        };
        let mut y = v.clone();
        let mut trial = v.clone();
        let mut f_v = self.objective(v, &mut s);
        let mut t = 1.0f64;
        let mut step = 1.0f64;
        let mut iterations = 0;
        let mut last_progress = (f_v, 0usize);
        while iterations < settings.max_iters {
            iterations += 1;
            if f_v < last_progress.0 - 1e-15 * f_v.abs().max(1.0) {
                last_progress = (f_v, iterations);
            } else if iterations - last_progress.1 > STALL_WINDOW {
                // The objective no longer moves at working precision.
                break;
            }
            let f_y = self.gradient(&y, &mut s);
            let mut accepted = false;
            for _ in 0..60 {
                self.step_into(&y, step, &mut s, &mut trial);
                let mut model = f_y;
                for i in 0..n {
                    let c = s.curv[i].max(self.floor);
                    for ((a, b), g) in trial.row(i).iter().zip(y.row(i)).zip(s.grad.row(i)) {
                        let d = a - b;
                        model += g * d + 0.5 * c / step * d * d;
                    }
                }
                let f_t = self.objective(&trial, &mut s);
                if f_t <= model + 1e-15 * model.abs().max(1.0) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
            let f_t = self.objective(&trial, &mut s);
            if f_t > f_v {
                // Momentum overshot: restart from the last iterate.
                y.as_flat_mut().copy_from_slice(v.as_flat());
                t = 1.0;
                if iterations % 10 == 0 && self.residual(v, &mut s) <= settings.tol {
                    break;
                }
                continue;
            }
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            for ((yk, a), b) in y.as_flat_mut().iter_mut().zip(trial.as_flat()).zip(v.as_flat()) {
                *yk = a + beta * (a - b);
            }
            for i in 0..n {
                if !self.is_fixed(i) {
                    self.space.project(y.row_mut(i));
                }
            }
            std::mem::swap(v, &mut trial);
            f_v = f_t;
            t = t_next;
            step = (step * 2.0).min(1.0);
            if iterations % 10 == 0 && self.residual(v, &mut s) <= settings.tol {
                break;
            }
        }
        let residual = self.residual(v, &mut s);
        InnerOutcome { iterations, residual }
    }
}
