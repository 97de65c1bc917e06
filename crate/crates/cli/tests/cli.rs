use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lipgraph::data::LabeledDataset;
use lipgraph::experiment::{read_train_csv, RunConfig};
use lipgraph::graph::{Graph, VertexSet};
use serde_json::Value;

fn lipgraph(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipgraph"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn docs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, body).unwrap();
    path
}

const SMALL: &str = r#"{
    "seed": 3,
    "dataset": {"kind": "checkerboard", "n_samples": 600, "test_samples": 150},
    "graph": {"n": 40, "k": 6},
    "experiment": {
        "alphas": [0, 0.5, 2, 8],
        "epsilons": [0, 0.05, 1],
        "robustify_alpha": 2,
        "p_values": [2, 4, 8]
    }
}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = lipgraph(&["train", "--config", s(&cfg), "--out", s(out), "--quiet"]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(o.stderr.is_empty());
    }
    let csv_a = fs::read(a.join("train_sweep.csv")).unwrap();
    assert_eq!(csv_a, fs::read(b.join("train_sweep.csv")).unwrap());
    let text = String::from_utf8(csv_a).unwrap();
    assert!(text.starts_with("alpha,loss,accuracy,confidence,lipschitz,sensitivity,iters,kkt_pass\n"));

    let rows = read_train_csv(&a.join("train_sweep.csv")).unwrap();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0].alpha, 0.0);
    assert_eq!(rows[0].lipschitz, 0.0);
    assert!(rows.iter().all(|r| r.kkt_pass));
    for name in ["model_alpha_0.json", "model_alpha_0.5.json", "model_alpha_2.json", "model_alpha_8.json"] {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(lipgraph(&["gen-data", "--config", s(&cfg), "--out", s(&a), "--quiet"]).status.success());
    assert!(lipgraph(&["gen-data", "--config", s(&cfg), "--out", s(&b), "--seed", "99", "--quiet"]).status.success());
    assert_ne!(fs::read(a.join("train.csv")).unwrap(), fs::read(b.join("train.csv")).unwrap());
}

#[test]
fn gen_data_files_read_back() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("data");
    let o = lipgraph(&["gen-data", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!o.stderr.is_empty(), "progress goes to stderr without --quiet");

    let train = LabeledDataset::load_csv(&out.join("train.csv")).unwrap();
    let test = LabeledDataset::load_csv(&out.join("test.csv")).unwrap();
    assert_eq!((train.len(), test.len()), (600, 150));
    let header = fs::read_to_string(out.join("train.csv")).unwrap();
    assert!(header.starts_with("x0,x1,y0,y1\n"));
    let expected = lipgraph::experiment::load_datasets(&RunConfig::load(&cfg).unwrap()).unwrap();
    assert_eq!(train.inputs(), expected.0.inputs());
    assert_eq!(train.outputs(), expected.0.outputs());

    let vertices = VertexSet::read_csv(fs::File::open(out.join("vertices.csv")).unwrap(), 0).unwrap();
    assert_eq!(vertices.len(), 40);
    let graph = Graph::read_csv(vertices, fs::File::open(out.join("edges.csv")).unwrap()).unwrap();
    assert!(fs::read_to_string(out.join("edges.csv")).unwrap().starts_with("i,j,w\n"));
    assert!(graph.n_edges() >= 40 * 6 / 2);

    // The csv dataset kind consumes what gen-data wrote.
    let csv_cfg = fs::read_to_string(docs().join("examples/csv.json")).unwrap();
    let csv_cfg = csv_cfg.replace("\"n\": 100", "\"n\": 30");
    let path = out.join("csv.json");
    fs::write(&path, csv_cfg).unwrap();
    let run = out.join("run");
    let o = lipgraph(&["train", "--config", s(&path), "--out", s(&run), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_train_csv(&run.join("train_sweep.csv")).unwrap().len(), 3);
}

#[test]
fn robustify_writes_ladder_and_tradeoff() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("r");
    let o = lipgraph(&["robustify", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut ladder = csv::Reader::from_path(out.join("robustify_ladder.csv")).unwrap();
    assert_eq!(
        ladder.headers().unwrap().iter().collect::<Vec<_>>(),
        ["epsilon", "p", "seminorm_norm", "lipschitz", "loss", "kappa"]
    );
    let rows: Vec<Vec<f64>> = ladder
        .records()
        .map(|r| r.unwrap().iter().map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 3 * 3);

    let mut summary = csv::Reader::from_path(out.join("tradeoff.csv")).unwrap();
    assert_eq!(
        summary.headers().unwrap().iter().collect::<Vec<_>>(),
        ["epsilon", "lipschitz", "loss", "accuracy", "confidence"]
    );
    let pts: Vec<Vec<f64>> = summary
        .records()
        .map(|r| r.unwrap().iter().map(|f| f.parse().unwrap()).collect())
        .collect();
    assert_eq!(pts.len(), 3);
    for w in pts.windows(2) {
        assert!(w[1][1] <= w[0][1] + 1e-6);
    }
    // epsilon = 1 admits the constant map.
    assert_eq!(pts[2][1], 0.0);
    assert_eq!(pts[2][4], 0.5);
}

#[test]
fn eval_writes_metrics_and_sensitivity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("t");
    assert!(lipgraph(&["train", "--config", s(&cfg), "--out", s(&out), "--quiet"]).status.success());
    let model = out.join("model_alpha_2.json");
    let o = lipgraph(&["eval", "--config", s(&cfg), "--out", s(&out), "--model", s(&model), "--quiet"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let metrics: Value = serde_json::from_str(&fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_test"], 150);
    let sens: Value = serde_json::from_str(&fs::read_to_string(out.join("sensitivity.json")).unwrap()).unwrap();
    assert_eq!(sens["delta"], 0.05);
    assert_eq!(sens["bound_satisfied"], true);
    assert_eq!(sens["degradations"].as_array().unwrap().len(), 150);
}

#[test]
fn errors_exit_nonzero_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("e");

    let o = lipgraph(&["eval", "--config", s(&cfg), "--out", s(&out), "--model", "/nonexistent/model.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does not exist"));

    let corrupt = dir.path().join("corrupt.json");
    fs::write(&corrupt, "{\"vertices\": 3").unwrap();
    let o = lipgraph(&["eval", "--config", s(&cfg), "--out", s(&out), "--model", s(&corrupt)]);
    assert_eq!(o.status.code(), Some(1));

    let bad = write_config(dir.path(), &SMALL.replace("[0, 0.5, 2, 8]", "[2, 1]"));
    let o = lipgraph(&["train", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("strictly increasing"));

    let o = lipgraph(&["train", "--config", "/nonexistent/config.json", "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn uncertified_solves_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL.replace(
        "\"graph\": {\"n\": 40, \"k\": 6},",
        "\"graph\": {\"n\": 40, \"k\": 6}, \"solver\": {\"max_iters\": 3},",
    );
    let cfg = write_config(dir.path(), &body);
    let out = dir.path().join("u");
    let o = lipgraph(&["train", "--config", s(&cfg), "--out", s(&out), "--quiet"]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_train_csv(&out.join("train_sweep.csv")).unwrap();
    assert!(rows.iter().any(|r| !r.kkt_pass));
}

#[test]
fn shipped_configs_parse_and_match_the_schema_keys() {
    for name in ["checkerboard.json", "mnist.json"] {
        RunConfig::load(&docs().join("examples").join(name)).unwrap();
    }
    let schema: Value = serde_json::from_str(&fs::read_to_string(docs().join("config.schema.json")).unwrap()).unwrap();
    let cfg = RunConfig::load(&docs().join("examples/checkerboard.json")).unwrap();
    let full = serde_json::to_value(&cfg).unwrap();
    let keys = |v: &Value| -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    };
    let props = &schema["properties"];
    assert_eq!(keys(&full), keys(props));
    assert_eq!(keys(&full["graph"]), keys(&props["graph"]["properties"]));
    assert_eq!(keys(&full["solver"]), keys(&props["solver"]["properties"]));
    assert_eq!(keys(&full["experiment"]), keys(&props["experiment"]["properties"]));
    assert_eq!(
        keys(&full["experiment"]["inner"]),
        keys(&props["experiment"]["properties"]["inner"]["properties"])
    );
}
