use super::*;
use crate::data::{gen_checkerboard, Bounds, CheckerboardSpec};
use crate::graph::{build_knn_graph, partition_dataset, select_vertices, VertexSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    graph: Graph,
    partition: DatasetPartition,
    dataset: LabeledDataset,
    spec: LossSpec,
}

fn instance(vertices: Rows, k: usize, xs: Rows, ys: Rows, space: OutputSpace) -> Instance {
    let dataset = LabeledDataset::new(xs, ys, Bounds::unit(vertices.dim()), space).unwrap();
    let vs = VertexSet::new(vertices, 0).unwrap();
    let partition = partition_dataset(&vs, &dataset).unwrap();
    let graph = build_knn_graph(vs, k).unwrap();
    let spec = LossSpec::squared(dataset.output_space());
    Instance {
        graph,
        partition,
        dataset,
        spec,
    }
}

fn two_vertex() -> Instance {
    instance(
        Rows::from_rows(&[[0.0], [1.0]]).unwrap(),
        1,
        Rows::from_rows(&[[0.0], [1.0]]).unwrap(),
        Rows::from_rows(&[[0.0], [1.0]]).unwrap(),
        OutputSpace::unit_box(1),
    )
}

fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let n = rng.gen_range(3..=10);
        let k = rng.gen_range(2..=4).min(n - 1);
        let dim_y = rng.gen_range(1..=3);
        let n_samples = rng.gen_range(2 * n..=5 * n);
        let verts: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
        let xs: Vec<[f64; 2]> = (0..n_samples).map(|_| [rng.gen(), rng.gen()]).collect();
        let (space, ys): (OutputSpace, Vec<Vec<f64>>) = if dim_y == 1 {
            (OutputSpace::unit_box(1), (0..n_samples).map(|_| vec![rng.gen()]).collect())
        } else {
            let ys = (0..n_samples)
                .map(|_| {
                    let mut y = vec![0.0; dim_y];
                    y[rng.gen_range(0..dim_y)] = 1.0;
                    y
                })
                .collect();
            (OutputSpace::simplex(dim_y), ys)
        };
        let dataset = LabeledDataset::new(
            Rows::from_rows(&xs).unwrap(),
            Rows::from_rows(&ys).unwrap(),
            Bounds::unit(2),
            space,
        )
        .unwrap();
        let vs = VertexSet::new(Rows::from_rows(&verts).unwrap(), seed).unwrap();
        let Ok(graph) = build_knn_graph(vs.clone(), k) else {
            continue;
        };
        let partition = partition_dataset(&vs, &dataset).unwrap();
        let spec = LossSpec::squared(dataset.output_space());
        return Instance {
            graph,
            partition,
            dataset,
            spec,
        };
    }
}

fn checkerboard(n: usize, samples: usize, seed: u64) -> Instance {
    let dataset = gen_checkerboard(&CheckerboardSpec::new(samples, seed)).unwrap();
    let vs = select_vertices(&dataset, n, "iid", seed + 1).unwrap();
    let graph = build_knn_graph(vs.clone(), 6).unwrap();
    let partition = partition_dataset(&vs, &dataset).unwrap();
    let spec = LossSpec::squared(dataset.output_space());
    Instance {
        graph,
        partition,
        dataset,
        spec,
    }
}

fn stats(inst: &Instance) -> CellStats {
    CellStats::new(&inst.partition, &inst.dataset, &inst.spec).unwrap()
}

fn random_labeling(inst: &Instance, rng: &mut ChaCha8Rng) -> Rows {
    let space = inst.dataset.output_space();
    let mut v = Rows::zeros(inst.graph.n_vertices(), space.dim());
    for row in v.iter_mut() {
        for x in row.iter_mut() {
            *x = rng.gen();
        }
        space.project(row);
    }
    v
}

fn solve_at(inst: &Instance, p: f64, budget: MarginBudget, init: &Rows) -> Result<PSolution> {
    solve_p_constrained(
        &inst.graph,
        &inst.partition,
        &inst.dataset,
        p,
        budget,
        &inst.spec,
        &PSolverConfig::default(),
        init,
    )
}

fn short_schedule() -> ContinuationSchedule {
    ContinuationSchedule {
        p_values: vec![2.0, 4.0, 8.0, 16.0],
        ..ContinuationSchedule::default()
    }
}

#[test]
fn seminorm_of_constant_is_zero() {
    let inst = random_instance(1);
    let v = Rows::repeat(&vec![0.3; inst.dataset.dim_y()], inst.graph.n_vertices());
    for p in [1.5, 2.0, 7.0] {
        assert_eq!(p_seminorm(&inst.graph, &v, p).unwrap(), 0.0);
        assert_eq!(normalized_seminorm(&inst.graph, &v, p).unwrap(), 0.0);
    }
}

#[test]
fn seminorm_counts_both_orientations() {
    let inst = two_vertex();
    let v = Rows::from_rows(&[[0.0], [1.0]]).unwrap();
    assert!((p_seminorm(&inst.graph, &v, 2.0).unwrap() - 1.0).abs() < 1e-15);
    assert!((p_seminorm(&inst.graph, &v, 4.0).unwrap() - 0.5).abs() < 1e-15);
}

#[test]
fn seminorm_rejects_small_p() {
    let inst = two_vertex();
    let v = Rows::from_rows(&[[0.0], [1.0]]).unwrap();
    assert!(p_seminorm(&inst.graph, &v, 1.0).is_err());
    assert!(normalized_seminorm(&inst.graph, &v, 0.5).is_err());
}

#[test]
fn budget_rejects_negative_parts() {
    assert!(MarginBudget::new(0.1, -1e-3).is_err());
    assert!(MarginBudget::new(-0.1, 0.0).is_err());
    assert_eq!(MarginBudget::new(0.25, 0.5).unwrap().budget(), 0.75);
}

#[test]
fn schedule_validation() {
    let mut s = ContinuationSchedule::default();
    assert!(s.validate().is_ok());
    s.p_values = vec![2.0, 2.0];
    assert!(s.validate().is_err());
    s.p_values = vec![1.0, 2.0];
    assert!(s.validate().is_err());
    s.p_values = vec![];
    assert!(s.validate().is_err());
}

#[test]
fn two_vertex_p2_recovers_closed_form() {
    let inst = two_vertex();
    let init = Rows::from_rows(&[[0.0], [1.0]]).unwrap();
    let sol = solve_at(&inst, 2.0, MarginBudget::new(0.0625, 0.0).unwrap(), &init).unwrap();
    assert!((sol.labeling.row(0)[0] - 0.25).abs() < 1e-6, "{:?}", sol.labeling);
    assert!((sol.labeling.row(1)[0] - 0.75).abs() < 1e-6, "{:?}", sol.labeling);
    assert!(sol.kappa > 0.0);
    assert!((sol.loss - 0.0625).abs() < 1e-8);
    assert!(sol.kkt.pass, "{:?}", sol.kkt);
}

#[test]
fn constant_within_budget_gives_zero_multiplier() {
    let inst = two_vertex();
    let init = Rows::from_rows(&[[0.0], [1.0]]).unwrap();
    // The global mean 0.5 has loss 0.25.
    let sol = solve_at(&inst, 2.0, MarginBudget::new(0.2, 0.1).unwrap(), &init).unwrap();
    assert_eq!(sol.kappa, 0.0);
    assert_eq!(sol.seminorm_norm, 0.0);
    assert_eq!(sol.lipschitz, 0.0);
    assert_eq!(sol.labeling.row(0), sol.labeling.row(1));
    assert!(sol.kkt.pass);
}

#[test]
fn budget_below_loss_floor_is_rejected() {
    // Two samples with different labels in one cell force a positive floor.
    let inst = instance(
        Rows::from_rows(&[[0.1], [0.9]]).unwrap(),
        1,
        Rows::from_rows(&[[0.0], [0.2], [1.0]]).unwrap(),
        Rows::from_rows(&[[0.0], [1.0], [1.0]]).unwrap(),
        OutputSpace::unit_box(1),
    );
    let floor = stats(&inst).loss(&stats(&inst).cell_means());
    assert!(floor > 0.1);
    let init = stats(&inst).cell_means();
    let err = solve_at(&inst, 2.0, MarginBudget::new(0.5 * floor, 0.0).unwrap(), &init).unwrap_err();
    assert!(matches!(err, Error::InfeasibleBudget { .. }), "{err}");
}

#[test]
fn budget_at_floor_fixes_occupied_cells() {
    let inst = random_instance(7);
    let st = stats(&inst);
    let means = st.cell_means();
    let floor = st.loss(&means);
    let sol = solve_at(&inst, 4.0, MarginBudget::new(floor, 0.0).unwrap(), &means).unwrap();
    for i in 0..inst.graph.n_vertices() {
        if inst.partition.mass(i) > 0.0 {
            assert_eq!(sol.labeling.row(i), means.row(i));
        }
    }
    assert!(sol.kappa.is_infinite());
    assert!((sol.loss - floor).abs() < 1e-12);
}

/// Exhaustive search over a grid of scalar labelings on three vertices.
fn grid_minimum(inst: &Instance, p: f64, budget: f64, steps: usize) -> f64 {
    let st = stats(inst);
    let terms = SeminormTerms::new(&inst.graph);
    let mut best = f64::INFINITY;
    let mut v = Rows::zeros(3, 1);
    for a in 0..=steps {
        for b in 0..=steps {
            for c in 0..=steps {
                v.row_mut(0)[0] = a as f64 / steps as f64;
                v.row_mut(1)[0] = b as f64 / steps as f64;
                v.row_mut(2)[0] = c as f64 / steps as f64;
                if st.loss(&v) <= budget {
                    best = best.min(terms.value(&v, p));
                }
            }
        }
    }
    best
}

#[test]
fn three_vertex_solution_beats_every_grid_point() {
    let inst = instance(
        Rows::from_rows(&[[0.1], [0.45], [0.9]]).unwrap(),
        2,
        Rows::from_rows(&[[0.05], [0.15], [0.4], [0.5], [0.85], [0.95]]).unwrap(),
        Rows::from_rows(&[[0.0], [0.1], [0.3], [0.9], [1.0], [0.8]]).unwrap(),
        OutputSpace::unit_box(1),
    );
    let st = stats(&inst);
    let floor = st.loss(&st.cell_means());
    let constant = st.loss(&Rows::repeat(&st.global_mean(), 3));
    let budget = floor + 0.3 * (constant - floor);
    for p in [2.0, 3.0, 6.0] {
        let sol = solve_at(&inst, p, MarginBudget::new(budget, 0.0).unwrap(), &st.cell_means()).unwrap();
        assert!(sol.kkt.pass, "{:?}", sol.kkt);
        let grid = grid_minimum(&inst, p, budget, 160);
        assert!(sol.seminorm_norm <= grid + 1e-9, "p={p}: {} vs grid {grid}", sol.seminorm_norm);
        assert!(grid - sol.seminorm_norm < 2e-2 * grid, "p={p}: {} vs grid {grid}", sol.seminorm_norm);
    }
}

#[test]
fn zero_margin_stays_on_reference_loss() {
    let inst = checkerboard(60, 1500, 3);
    let alpha = 2.0;
    let rep = robustify(
        &inst.graph,
        &inst.partition,
        &inst.dataset,
        alpha,
        0.0,
        &inst.spec,
        &ContinuationSchedule::default(),
    )
    .unwrap();
    assert!(rep.converged());
    for s in &rep.steps {
        assert!((s.loss - rep.budget.budget()).abs() < 1e-6, "{s:?}");
    }
    assert!(rep.lipschitz <= 1.05 * alpha, "{}", rep.lipschitz);
}

#[test]
fn large_margin_gives_constant_map() {
    let inst = checkerboard(40, 800, 5);
    let rep = robustify(
        &inst.graph,
        &inst.partition,
        &inst.dataset,
        2.0,
        1.0,
        &inst.spec,
        &short_schedule(),
    )
    .unwrap();
    assert!(rep.steps.iter().all(|s| s.seminorm_norm == 0.0 && s.kappa == 0.0));
    assert_eq!(rep.lipschitz, 0.0);
    for row in rep.labeling.iter() {
        assert_eq!(row, [0.5, 0.5]);
    }
}

#[test]
fn multiplier_vanishes_exactly_when_a_constant_fits() {
    let inst = random_instance(11);
    let st = stats(&inst);
    let means = st.cell_means();
    let floor = st.loss(&means);
    let constant = st.loss(&Rows::repeat(&st.global_mean(), inst.graph.n_vertices()));
    for frac in [0.2, 0.6, 0.95, 1.0, 1.3] {
        let b = floor + frac * (constant - floor);
        let sol = solve_at(&inst, 2.0, MarginBudget::new(b, 0.0).unwrap(), &means).unwrap();
        assert!(sol.kkt.pass, "frac={frac}: {:?}", sol.kkt);
        if frac >= 1.0 {
            assert_eq!(sol.kappa, 0.0, "frac={frac}");
        } else {
            assert!(sol.kappa > 0.0, "frac={frac}");
        }
    }
}

#[test]
fn tradeoff_is_monotone_and_reaches_half_confidence() {
    let inst = checkerboard(60, 1500, 9);
    let test = gen_checkerboard(&CheckerboardSpec::new(400, 99)).unwrap();
    let eps = [0.0, 0.02, 0.05, 0.1, 0.2, 0.5];
    let curve = tradeoff_curve(
        &inst.graph,
        &inst.partition,
        &inst.dataset,
        2.0,
        &eps,
        &inst.spec,
        &short_schedule(),
        &test,
    )
    .unwrap();
    assert!(curve.converged());
    for w in curve.points.windows(2) {
        assert!(w[1].lipschitz <= w[0].lipschitz + 1e-6, "{:?}", w);
        assert!(w[1].loss >= w[0].loss - 1e-9, "{:?}", w);
    }
    let last = curve.points.last().unwrap();
    assert_eq!(last.lipschitz, 0.0);
    assert_eq!(last.confidence, 0.5);

    let mut ladder = Vec::new();
    curve.write_ladder_csv(&mut ladder).unwrap();
    let text = String::from_utf8(ladder).unwrap();
    assert!(text.starts_with("epsilon,p,seminorm_norm,lipschitz,loss,kappa\n"));
    assert_eq!(text.lines().count(), 1 + eps.len() * 4);
    let mut summary = Vec::new();
    curve.write_summary_csv(&mut summary).unwrap();
    let text = String::from_utf8(summary).unwrap();
    assert!(text.starts_with("epsilon,lipschitz,loss,accuracy,confidence\n"));
    assert_eq!(text.lines().count(), 1 + eps.len());
}

#[test]
fn tradeoff_rejects_bad_grids() {
    let inst = checkerboard(20, 200, 2);
    let s = short_schedule();
    let run = |eps: &[f64]| {
        tradeoff_curve(&inst.graph, &inst.partition, &inst.dataset, 1.0, eps, &inst.spec, &s, &inst.dataset)
    };
    assert!(run(&[]).is_err());
    assert!(run(&[0.1, 0.1]).is_err());
    assert!(run(&[-0.1, 0.1]).is_err());
}

#[test]
fn warm_and_cold_starts_agree() {
    let inst = checkerboard(60, 1500, 4);
    let rep = robustify(
        &inst.graph,
        &inst.partition,
        &inst.dataset,
        2.0,
        0.02,
        &inst.spec,
        &short_schedule(),
    )
    .unwrap();
    let tight = PSolverConfig {
        inner_tol: 1e-9,
        loss_tol: 1e-9,
        max_inner_iters: 100_000,
        ..PSolverConfig::default()
    };
    let cold = stats(&inst).cell_means();
    for s in &rep.steps {
        let sol = solve_p_constrained(
            &inst.graph,
            &inst.partition,
            &inst.dataset,
            s.p,
            rep.budget,
            &inst.spec,
            &tight,
            &cold,
        )
        .unwrap();
        let rel = (sol.seminorm_norm - s.seminorm_norm).abs() / s.seminorm_norm;
        assert!(rel < 1e-4, "p={}: warm {} cold {}", s.p, s.seminorm_norm, sol.seminorm_norm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn ratio_graph_reproduces_normalized_seminorm(seed in 0u64..1000, p in 1.5f64..12.0) {
        let inst = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let v = random_labeling(&inst, &mut rng);
        let direct = normalized_seminorm(&inst.graph, &v, p).unwrap();
        let via = (p * p_seminorm(&ratio_graph(&inst.graph, p), &v, p).unwrap()).powf(1.0 / p);
        prop_assert!((direct - via).abs() <= 1e-10 * direct.max(1.0), "{direct} vs {via}");
    }

    #[test]
    fn normalized_seminorm_is_monotone_and_below_the_max_ratio(seed in 0u64..1000) {
        let inst = random_instance(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let v = random_labeling(&inst, &mut rng);
        let lip = graph_lipschitz(&inst.graph, &v).unwrap();
        let terms = SeminormTerms::new(&inst.graph);
        let c_min = terms.mass.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut prev = 0.0;
        for p in [1.5, 2.0, 4.0, 8.0, 64.0, 512.0] {
            let n = normalized_seminorm(&inst.graph, &v, p).unwrap();
            prop_assert!(n >= prev - 1e-12);
            prop_assert!(n <= lip * (1.0 + 1e-12));
            prop_assert!(n >= c_min.powf(1.0 / p) * lip * (1.0 - 1e-12));
            prev = n;
        }
    }

    #[test]
    fn ladder_is_feasible_slack_and_monotone(seed in 0u64..1000, frac in 0.05f64..0.9) {
        let inst = random_instance(seed);
        let st = stats(&inst);
        let means = st.cell_means();
        let floor = st.loss(&means);
        let constant = st.loss(&Rows::repeat(&st.global_mean(), inst.graph.n_vertices()));
        prop_assume!(constant - floor > 1e-6);
        let budget = MarginBudget::new(floor + frac * (constant - floor), 0.0).unwrap();
        let mut current = means.clone();
        let mut prev = 0.0;
        for p in [2.0, 4.0, 8.0, 16.0] {
            let sol = solve_at(&inst, p, budget, &current).unwrap();
            prop_assert!(sol.kkt.pass, "p={p}: {:?}", sol.kkt);
            prop_assert!(sol.loss <= budget.budget() + 1e-6);
            prop_assert!(sol.kappa * (sol.loss - budget.budget()).abs() <= 1e-6);
            prop_assert!(sol.seminorm_norm >= prev - 1e-6, "p={p}: {} after {prev}", sol.seminorm_norm);
            prev = sol.seminorm_norm;
            current = sol.labeling.0;
        }
    }
}
