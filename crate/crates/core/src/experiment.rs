//! Config-driven sweeps behind the command-line tool.
//!
//! A [`RunConfig`] names a dataset, a graph recipe, solver settings and the
//! sweep grids. [`prepare`] turns it into a train/test pair and a graph; the
//! `run_*` functions execute one command each and write their artifacts into
//! an output directory.

use std::fs::{self, File};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{gen_checkerboard, idx_to_dataset, read_idx, split, Bounds, CheckerboardSpec, LabeledDataset, OutputSpace};
use crate::error::{invalid, Result};
use crate::eval::{evaluate, sensitivity, EvalMetrics, SensitivityReport};
use crate::graph::{build_knn_graph_weighted, partition_dataset, select_vertices, DatasetPartition, EdgeWeighting, Graph, VertexSet};
use crate::lipsolver::{solve_lipschitz_constrained, SolveReport, SolverConfig};
use crate::loss::LossSpec;
use crate::plapsolver::{tradeoff_curve, ContinuationSchedule, PSolverConfig};
use crate::rows::Rows;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Uniform samples on the unit square with checkerboard labels; the test
    /// set is an independent draw.
    Checkerboard {
        n_samples: usize,
        test_samples: usize,
        #[serde(default = "default_grid")]
        grid: usize,
    },
    /// IDX image and label files, gzipped or raw.
    Mnist {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "default_classes")]
        n_classes: usize,
        /// Keep only the first this many samples.
        #[serde(default)]
        subsample: Option<usize>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    /// `x0,..,y0,..` CSV files. Without `test`, the training file is split.
    Csv {
        train: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
}

fn default_grid() -> usize {
    4
}

fn default_classes() -> usize {
    10
}

fn default_test_fraction() -> f64 {
    0.2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    /// Number of vertices.
    pub n: usize,
    pub k: usize,
    /// Vertex selector name: "iid" or "kmeans".
    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default)]
    pub weighting: EdgeWeighting,
}

fn default_method() -> String {
    "iid".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Lipschitz bounds for `train`.
    pub alphas: Vec<f64>,
    /// Loss margins for `robustify`.
    pub epsilons: Vec<f64>,
    /// Reference bound for `robustify`.
    pub robustify_alpha: f64,
    pub p_values: Vec<f64>,
    pub inner: PSolverConfig,
    /// Perturbation size for sensitivity.
    pub delta: f64,
    /// Model file for `eval`.
    pub model: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.5, 1.0, 2.0, 4.0, 8.0],
            epsilons: vec![0.0, 0.01, 0.02, 0.05, 0.1, 0.5],
            robustify_alpha: 2.0,
            p_values: ContinuationSchedule::default().p_values,
            inner: PSolverConfig::default(),
            delta: 0.05,
            model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random choice: sampling, splits, vertex selection and
    /// random solver starts.
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub graph: GraphConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub experiment: ExperimentConfig,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

/// Independent stream for each consumer of the run seed.
fn derive_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn strictly_increasing(xs: &[f64]) -> bool {
    xs.windows(2).all(|w| w[0] < w[1])
}

impl RunConfig {
    /// Parses a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.dataset {
            DatasetConfig::Mnist { images, labels, .. } => {
                fix(images);
                fix(labels);
            }
            DatasetConfig::Csv { train, test, .. } => {
                fix(train);
                if let Some(t) = test {
                    fix(t);
                }
            }
            DatasetConfig::Checkerboard { .. } => {}
        }
        if let Some(m) = &mut self.experiment.model {
            fix(m);
        }
        if let Some(o) = &mut self.out {
            fix(o);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let must_exist = |p: &Path| -> Result<()> {
            if p.exists() {
                Ok(())
            } else {
                invalid(format!("{} does not exist", p.display()))
            }
        };
        match &self.dataset {
            DatasetConfig::Checkerboard {
                n_samples,
                test_samples,
                grid,
            } => {
                if *n_samples == 0 || *test_samples == 0 || *grid == 0 {
                    return invalid("checkerboard sizes must be positive");
                }
            }
            DatasetConfig::Mnist {
                images,
                labels,
                test_fraction,
                ..
            } => {
                must_exist(images)?;
                must_exist(labels)?;
                check_fraction(*test_fraction)?;
            }
            DatasetConfig::Csv {
                train,
                test,
                test_fraction,
            } => {
                must_exist(train)?;
                match test {
                    Some(t) => must_exist(t)?,
                    None => check_fraction(*test_fraction)?,
                }
            }
        }
        if self.graph.k == 0 || self.graph.n < 2 {
            return invalid("graph needs n >= 2 and k >= 1");
        }
        self.solver.validate()?;
        let e = &self.experiment;
        if e.alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) || !strictly_increasing(&e.alphas) {
            return invalid("alpha grid must be finite, non-negative and strictly increasing");
        }
        if e.epsilons.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) || !strictly_increasing(&e.epsilons) {
            return invalid("epsilon grid must be finite, non-negative and strictly increasing");
        }
        if !(e.robustify_alpha >= 0.0) {
            return invalid("robustify_alpha must be non-negative");
        }
        if !(e.delta > 0.0) || !e.delta.is_finite() {
            return invalid("delta must be positive");
        }
        if let Some(m) = &e.model {
            must_exist(m)?;
        }
        self.schedule().validate()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Solver settings with the random start tied to the run seed.
    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            seed: derive_seed(self.seed, 3),
            ..self.solver.clone()
        }
    }

    pub fn schedule(&self) -> ContinuationSchedule {
        ContinuationSchedule {
            p_values: self.experiment.p_values.clone(),
            solver: self.solver_config(),
            inner: self.experiment.inner.clone(),
        }
    }
}

fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 1.0 {
        Ok(())
    } else {
        invalid(format!("test fraction {f} must lie in (0, 1)"))
    }
}

/// Train and test sets described by the dataset block.
pub fn load_datasets(cfg: &RunConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &cfg.dataset {
        DatasetConfig::Checkerboard {
            n_samples,
            test_samples,
            grid,
        } => {
            let train = gen_checkerboard(&CheckerboardSpec {
                n_samples: *n_samples,
                grid: *grid,
                seed: derive_seed(cfg.seed, 0),
            })?;
            let test = gen_checkerboard(&CheckerboardSpec {
                n_samples: *test_samples,
                grid: *grid,
                seed: derive_seed(cfg.seed, 1),
            })?;
            Ok((train, test))
        }
        DatasetConfig::Mnist {
            images,
            labels,
            n_classes,
            subsample,
            test_fraction,
        } => {
            let mut data = idx_to_dataset(&read_idx(images)?, &read_idx(labels)?, *n_classes)?;
            if let Some(m) = *subsample {
                if m < data.len() {
                    data = data.subset(&(0..m).collect::<Vec<_>>())?;
                }
            }
            split(&data, *test_fraction, derive_seed(cfg.seed, 1))
        }
        DatasetConfig::Csv {
            train,
            test,
            test_fraction,
        } => {
            let tr = LabeledDataset::load_csv(train)?;
            match test {
                None => split(&tr, *test_fraction, derive_seed(cfg.seed, 1)),
                Some(t) => {
                    let te = LabeledDataset::load_csv(t)?;
                    common_bounds(tr, te)
                }
            }
        }
    }
}

/// Re-declares two CSV datasets on the union of their input ranges and the
/// training output space.
fn common_bounds(train: LabeledDataset, test: LabeledDataset) -> Result<(LabeledDataset, LabeledDataset)> {
    if train.dim_x() != test.dim_x() || train.dim_y() != test.dim_y() {
        return invalid("train and test CSV dimensions differ");
    }
    let (a, b) = (train.input_bounds(), test.input_bounds());
    let bounds = Bounds {
        lower: a.lower.iter().zip(&b.lower).map(|(x, y)| x.min(*y)).collect(),
        upper: a.upper.iter().zip(&b.upper).map(|(x, y)| x.max(*y)).collect(),
    };
    let space = train.output_space().clone();
    let rebuild = |d: &LabeledDataset| {
        LabeledDataset::new(d.inputs().clone(), d.outputs().clone(), bounds.clone(), space.clone())
    };
    Ok((rebuild(&train)?, rebuild(&test)?))
}

/// Everything a sweep needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: LabeledDataset,
    pub test: LabeledDataset,
    pub graph: Graph,
    pub partition: DatasetPartition,
    pub spec: LossSpec,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let (train, test) = load_datasets(cfg)?;
    let vertices = select_vertices(&train, cfg.graph.n, &cfg.graph.method, derive_seed(cfg.seed, 2))?;
    let graph = build_knn_graph_weighted(vertices, cfg.graph.k, cfg.graph.weighting)?;
    let partition = partition_dataset(graph.vertices(), &train)?;
    let spec = LossSpec::squared(train.output_space());
    Ok(Prepared {
        train,
        test,
        graph,
        partition,
        spec,
    })
}

/// A trained classifier: graph, output space and the solver report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub vertices: Rows,
    /// Undirected `(i, j, w)` triples.
    pub edges: Vec<(usize, usize, f64)>,
    pub output_space: OutputSpace,
    pub report: SolveReport,
}

impl ModelFile {
    pub fn new(graph: &Graph, output_space: &OutputSpace, report: SolveReport) -> Self {
        Self {
            vertices: graph.vertices().points().clone(),
            edges: graph.triples(),
            output_space: output_space.clone(),
            report,
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        Graph::from_edges(VertexSet::new(self.vertices.clone(), 0)?, &self.edges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.report.labeling.len() != m.vertices.len() || m.report.labeling.dim() != m.output_space.dim() {
            return invalid("model labeling does not match its vertices or output space");
        }
        Ok(m)
    }
}

/// One row of `train_sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub alpha: f64,
    pub loss: f64,
    pub accuracy: f64,
    pub confidence: f64,
    pub lipschitz: f64,
    pub sensitivity: f64,
    pub iters: usize,
    pub kkt_pass: bool,
}

/// What a command produced.
#[derive(Debug, Clone)]
pub struct Outcome {
    /// Every solve converged with a passing certificate.
    pub certified: bool,
    pub files: Vec<PathBuf>,
}

fn ensure_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    Ok(())
}

pub fn model_file_name(alpha: f64) -> String {
    format!("model_alpha_{alpha}.json")
}

/// Solves, evaluates and probes sensitivity for every alpha in the grid.
pub fn run_train(cfg: &RunConfig, out: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Outcome> {
    ensure_dir(out)?;
    let prep = prepare(cfg)?;
    let solver = cfg.solver_config();
    log(&format!(
        "train: {} samples, {} vertices, {} edges, {} alphas",
        prep.train.len(),
        prep.graph.n_vertices(),
        prep.graph.n_edges(),
        cfg.experiment.alphas.len()
    ));
    let results: Vec<(TrainRow, SolveReport)> = cfg
        .experiment
        .alphas
        .par_iter()
        .map(|&alpha| -> Result<(TrainRow, SolveReport)> {
            let rep = solve_lipschitz_constrained(&prep.graph, &prep.partition, &prep.train, alpha, &prep.spec, &solver)?;
            let metrics = evaluate(prep.graph.vertices(), &rep.labeling, &prep.test, &prep.spec)?;
            let sens = sensitivity(
                prep.graph.vertices(),
                &prep.graph,
                &rep.labeling,
                &prep.test,
                cfg.experiment.delta,
                &prep.spec,
            )?;
            log(&format!(
                "alpha={alpha}: loss={:.6} acc={:.4} iters={} kkt={}",
                rep.loss, metrics.accuracy, rep.iterations, rep.kkt.pass
            ));
            let row = TrainRow {
                alpha,
                loss: rep.loss,
                accuracy: metrics.accuracy,
                confidence: metrics.mean_confidence,
                lipschitz: rep.lipschitz,
                sensitivity: sens.max_confidence_degradation,
                iters: rep.iterations,
                kkt_pass: rep.kkt.pass,
            };
            Ok((row, rep))
        })
        .collect::<Result<_>>()?;

    let mut files = Vec::new();
    let csv_path = out.join("train_sweep.csv");
    write_train_csv(&csv_path, results.iter().map(|(r, _)| r))?;
    files.push(csv_path);
    let mut certified = true;
    for (row, rep) in results {
        certified &= rep.converged && rep.kkt.pass;
        let path = out.join(model_file_name(row.alpha));
        ModelFile::new(&prep.graph, prep.train.output_space(), rep).save(&path)?;
        files.push(path);
    }
    Ok(Outcome { certified, files })
}

fn write_train_csv<'a>(path: &Path, rows: impl Iterator<Item = &'a TrainRow>) -> Result<()> {
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(["alpha", "loss", "accuracy", "confidence", "lipschitz", "sensitivity", "iters", "kkt_pass"])?;
    for r in rows {
        w.write_record([
            r.alpha.to_string(),
            r.loss.to_string(),
            r.accuracy.to_string(),
            r.confidence.to_string(),
            r.lipschitz.to_string(),
            r.sensitivity.to_string(),
            r.iters.to_string(),
            r.kkt_pass.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_train_csv(path: &Path) -> Result<Vec<TrainRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// The epsilon sweep at `robustify_alpha`.
pub fn run_robustify(cfg: &RunConfig, out: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Outcome> {
    ensure_dir(out)?;
    let prep = prepare(cfg)?;
    log(&format!(
        "robustify: alpha={} over {} margins, p ladder {:?}",
        cfg.experiment.robustify_alpha,
        cfg.experiment.epsilons.len(),
        cfg.experiment.p_values
    ));
    let curve = tradeoff_curve(
        &prep.graph,
        &prep.partition,
        &prep.train,
        cfg.experiment.robustify_alpha,
        &cfg.experiment.epsilons,
        &prep.spec,
        &cfg.schedule(),
        &prep.test,
    )?;
    for pt in &curve.points {
        log(&format!(
            "eps={}: lipschitz={:.6} loss={:.6} acc={:.4}",
            pt.epsilon, pt.lipschitz, pt.loss, pt.accuracy
        ));
    }
    let ladder = out.join("robustify_ladder.csv");
    let summary = out.join("tradeoff.csv");
    curve.save_csvs(&ladder, &summary)?;
    Ok(Outcome {
        certified: curve.converged(),
        files: vec![ladder, summary],
    })
}

/// Metrics and sensitivity of a saved model on the configured test set.
pub fn run_eval(cfg: &RunConfig, model: &Path, out: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Outcome> {
    ensure_dir(out)?;
    let m = ModelFile::load(model)?;
    let graph = m.graph()?;
    let (_, test) = load_datasets(cfg)?;
    if test.dim_x() != graph.vertices().dim() || test.dim_y() != m.output_space.dim() {
        return invalid("test set dimensions do not match the model");
    }
    let spec = LossSpec::squared(&m.output_space);
    let labeling = &m.report.labeling;
    let metrics: EvalMetrics = evaluate(graph.vertices(), labeling, &test, &spec)?;
    let sens: SensitivityReport = sensitivity(graph.vertices(), &graph, labeling, &test, cfg.experiment.delta, &spec)?;
    log(&format!(
        "eval: accuracy={:.4} confidence={:.4} sensitivity={:.6} bound_ok={}",
        metrics.accuracy, metrics.mean_confidence, sens.max_confidence_degradation, sens.bound_satisfied
    ));
    let mpath = out.join("metrics.json");
    let spath = out.join("sensitivity.json");
    fs::write(&mpath, serde_json::to_string_pretty(&metrics)?)?;
    fs::write(&spath, serde_json::to_string_pretty(&sens)?)?;
    Ok(Outcome {
        certified: true,
        files: vec![mpath, spath],
    })
}

/// Writes the train and test sets, the vertices and the edge list.
pub fn run_gen_data(cfg: &RunConfig, out: &Path, log: &(dyn Fn(&str) + Sync)) -> Result<Outcome> {
    ensure_dir(out)?;
    let prep = prepare(cfg)?;
    let files = vec![
        out.join("train.csv"),
        out.join("test.csv"),
        out.join("vertices.csv"),
        out.join("edges.csv"),
    ];
    prep.train.save_csv(&files[0])?;
    prep.test.save_csv(&files[1])?;
    prep.graph.vertices().save_csv(&files[2])?;
    prep.graph.save_csv(&files[3])?;
    log(&format!(
        "gen-data: {} train, {} test, {} vertices, {} edges",
        prep.train.len(),
        prep.test.len(),
        prep.graph.n_vertices(),
        prep.graph.n_edges()
    ));
    Ok(Outcome { certified: true, files })
}
