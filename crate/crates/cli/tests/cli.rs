use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn config(dir: &TempDir, json: &str) -> PathBuf {
    let path = dir.path().join("run.json");
    fs::write(&path, json).unwrap();
    path
}

fn graphens(cmd: &str, config: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphens"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .args(extra)
        .output()
        .unwrap()
}

fn ok(out: Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn failure(out: Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    let line = stderr.lines().last().unwrap();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("{e}: {stderr}"))
}

fn emb_files(dir: &Path) -> usize {
    fs::read_dir(dir)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .path()
                .extension()
                .is_some_and(|x| x == "emb")
        })
        .count()
}

fn parse_csv(text: &str) -> (Vec<String>, Vec<Vec<f64>>) {
    let mut lines = text.lines();
    let header = lines.next().unwrap().split(',').map(String::from).collect();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn generate_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["lap"], "seed": 3}"#,
    );
    let (a, b, c) = (
        dir.path().join("a"),
        dir.path().join("b"),
        dir.path().join("c"),
    );
    let msg = ok(graphens("generate", &cfg, &["--out", a.to_str().unwrap()]));
    ok(graphens("generate", &cfg, &["--out", b.to_str().unwrap()]));
    ok(graphens(
        "generate",
        &cfg,
        &["--out", c.to_str().unwrap(), "--seed", "4"],
    ));
    for f in [
        "graph.edgelist",
        "labels_degree.txt",
        "labels_closeness.txt",
    ] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    assert_ne!(
        fs::read(a.join("graph.edgelist")).unwrap(),
        fs::read(c.join("graph.edgelist")).unwrap()
    );
    let nodes: usize = msg.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!(nodes > 350 && nodes <= 400, "{msg}");
    let labels = fs::read_to_string(a.join("labels_degree.txt")).unwrap();
    assert_eq!(labels.lines().count(), nodes);
}

#[test]
fn single_geometric_graph() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic",
                        "graphs": [{"kind": "random_geometric", "radius": 0.25, "n": 100, "seed": 1}]},
            "methods": ["lap"]}"#,
    );
    let msg = ok(graphens("generate", &cfg, &[]));
    assert!(msg.starts_with("wrote 100 nodes"), "{msg}");
    assert!(dir.path().join("out/graph.edgelist").exists());
}

#[test]
fn embed_caches_one_winner_per_dimension() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["lap"], "dims": [32]}"#,
    );
    let msg = ok(graphens("embed", &cfg, &[]));
    assert!(msg.starts_with("cached 1 embeddings"), "{msg}");
    let cache = dir.path().join("out/cache");
    assert_eq!(emb_files(&cache), 1);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(cache.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["entries"]["lap"]["32"]["file"].is_string());
}

#[test]
fn gf_grid_fits_once_then_hits_cache() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["gf"], "dims": [32, 64, 128]}"#,
    );
    let msg = ok(graphens("embed", &cfg, &[]));
    assert!(
        msg.starts_with("cached 3 embeddings") && msg.contains("(27 fits)"),
        "{msg}"
    );
    assert_eq!(emb_files(&dir.path().join("out/cache")), 3);
    let again = ok(graphens("embed", &cfg, &[]));
    assert!(
        again.starts_with("cache hit: 3 embeddings") && again.contains("0 fits"),
        "{again}"
    );
    // A different seed invalidates the manifest.
    let reseeded = ok(graphens("embed", &cfg, &["--seed", "9"]));
    assert!(reseeded.contains("(27 fits)"), "{reseeded}");
}

const FOUR_METHODS: &str = r#"[
    {"id": "gf", "params": {"method": "gf"}, "grid": {"axes": {"reg": [1.0]}}},
    {"id": "hope", "params": {"method": "hope"}, "grid": {"axes": {"similarity": ["katz"]}}},
    "lap",
    {"id": "node2vec", "params": {"method": "node2vec", "walks_per_node": 2, "walk_length": 20}}
]"#;

#[test]
fn diversity_matrix_for_four_methods() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        &format!(
            r#"{{"dataset": {{"type": "synthetic"}}, "methods": {FOUR_METHODS}, "dims": [16],
                 "diversity": {{"dim": 16, "measures": ["dcor", "rv"]}}}}"#
        ),
    );
    ok(graphens("embed", &cfg, &[]));
    let printed = ok(graphens("diversity", &cfg, &[]));
    for file in ["diversity_dcor.csv", "diversity_rv.csv"] {
        let text = fs::read_to_string(dir.path().join("out").join(file)).unwrap();
        assert!(printed.contains(&text));
        let (header, rows) = parse_csv(&text);
        assert_eq!(header, ["gf", "hope", "lap", "node2vec"]);
        assert_eq!(rows.len(), 4);
        for i in 0..4 {
            assert!((rows[i][i] - 1.0).abs() < 1e-6, "{file}: {text}");
            for j in 0..4 {
                assert_eq!(rows[i][j], rows[j][i]);
                assert!((0.0..=1.0 + 1e-9).contains(&rows[i][j]));
            }
        }
    }
}

#[test]
fn diversity_of_one_method() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["lap"], "dims": [8],
            "diversity": {"dim": 8}}"#,
    );
    ok(graphens("embed", &cfg, &[]));
    let csv = ok(graphens("diversity", &cfg, &[]));
    let (header, rows) = parse_csv(&csv);
    assert_eq!(header, ["lap"]);
    assert_eq!(rows.len(), 1);
    assert!((rows[0][0] - 1.0).abs() < 1e-9);
}

#[test]
fn diversity_without_cache_names_missing_entries() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["lap", "gf"]}"#,
    );
    let err = failure(graphens("diversity", &cfg, &[]));
    assert!(err["error"].as_str().unwrap().contains("graphens embed"));
    let causes = err["causes"].to_string();
    assert!(
        causes.contains("lap@128") && causes.contains("gf@128"),
        "{causes}"
    );
}

#[test]
fn single_method_ensemble_table() {
    let dir = TempDir::new().unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic", "labels": "closeness"}, "methods": ["lap"],
            "dims": [16], "rounds": 2}"#,
    );
    let table = ok(graphens("ensemble", &cfg, &["--jobs", "1"]));
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3, "{table}");
    assert!(lines[0].starts_with("method"));
    assert!(
        lines[1].starts_with("lap") && lines[1].ends_with("+0.0%"),
        "{table}"
    );
    assert_eq!(lines[2], "(2 rounds)");
    let results: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/results.json")).unwrap())
            .unwrap();
    assert_eq!(results["rounds"].as_array().unwrap().len(), 2);
    assert_eq!(results["best_single"], "lap");
    assert_eq!(ok(graphens("report", &cfg, &[])), table);
}

#[test]
fn bad_config_reports_json_error() {
    let dir = TempDir::new().unwrap();
    let cfg = config(&dir, r#"{"dataset": {"type": "synthetic"}, "methods": []}"#);
    let err = failure(graphens("ensemble", &cfg, &[]));
    assert_eq!(err["error"], "config lists no methods");

    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["sdne"]}"#,
    );
    let err = failure(graphens("embed", &cfg, &[]));
    assert!(err["causes"].to_string().contains("sdne"));

    let err = failure(graphens("embed", &dir.path().join("missing.json"), &[]));
    assert!(err["error"].as_str().unwrap().contains("missing.json"));

    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "synthetic"}, "methods": ["lap"]}"#,
    );
    let err = failure(graphens("report", &cfg, &[]));
    assert!(err["error"].as_str().unwrap().contains("graphens ensemble"));
}

#[test]
fn files_dataset_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    // Two 5-cliques joined by one edge, plus a stray pair outside the
    // largest component.
    let mut edges = String::new();
    for block in 0..2 {
        for i in 0..5 {
            for j in i + 1..5 {
                edges += &format!("n{} n{}\n", block * 5 + i, block * 5 + j);
            }
        }
    }
    edges += "n4 n5\nx y\n";
    let labels: String = (0..10)
        .map(|i| format!("n{i} {}\n", if i < 5 { "a" } else { "b" }))
        .collect();
    fs::write(dir.path().join("edges.txt"), edges).unwrap();
    fs::write(dir.path().join("labels.txt"), labels + "x a\ny b\n").unwrap();
    // Rows in the order n0..n9 of the kept component.
    let ext: String = (0..10)
        .map(|i| {
            format!(
                "{} {}\n",
                if i < 5 { 1.0 } else { -1.0 },
                (i % 3) as f64 * 0.1
            )
        })
        .collect();
    fs::write(dir.path().join("ext.emb"), format!("10 2\n{ext}")).unwrap();
    let cfg = config(
        &dir,
        r#"{"dataset": {"type": "files", "edges": "edges.txt", "labels": "labels.txt"},
            "methods": ["lap", {"id": "ext", "params": {"method": "external", "paths": {"2": "ext.emb"}}}],
            "dims": [2], "fractions": [0.6, 0.2, 0.2], "rounds": 1}"#,
    );
    let table = ok(graphens("ensemble", &cfg, &[]));
    assert!(table.contains("lap") && table.contains("ext"), "{table}");
    assert!(table.contains("ensemble("), "{table}");
    let results: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/results.json")).unwrap())
            .unwrap();
    let sizes = &results["rounds"][0]["split_sizes"];
    assert_eq!(
        sizes[0].as_u64().unwrap() + sizes[1].as_u64().unwrap() + sizes[2].as_u64().unwrap(),
        10
    );
}
