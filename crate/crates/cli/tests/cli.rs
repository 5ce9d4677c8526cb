use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn lapool(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lapool")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = lapool(args);
    assert!(
        out.status.success(),
        "lapool {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_json(out: &Output) -> Value {
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("stderr has an error line");
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn pool_p3_gives_one_node() {
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("p3.json");
    fs::write(
        &graph,
        r#"{"n":3,"node_features":[[0],[1],[0]],"adjacency":[[0,1,0],[1,0,1],[0,1,0]]}"#,
    )
    .unwrap();
    let out = dir.path().join("run");
    ok(&["pool", "--graph", s(&graph), "--out", s(&out)]);

    let pooled = read_json(&out.join("pooled.json"));
    assert_eq!(pooled["n"], 1);
    assert_eq!(pooled["node_features"], serde_json::json!([[1.0]]));
    assert_eq!(pooled["adjacency"], serde_json::json!([[0.0]]));
    let assignment = read_json(&out.join("assignment.json"));
    assert_eq!(assignment["centroids"], serde_json::json!([1]));
    assert_eq!(assignment["affinity"], serde_json::json!([[1.0], [1.0], [1.0]]));
    let dot = fs::read_to_string(out.join("overview.dot")).unwrap();
    assert!(dot.contains("n1 [label=\"1\\nc1:1.000\", shape=box, style=bold];"));
    assert!(out.join("pooled.dot").exists());
    assert!(out.join("resolved_config.json").exists());
    assert!(out.join("run_meta.json").exists());
}

#[test]
fn gradcheck_passes() {
    let dir = TempDir::new().unwrap();
    let stdout = ok(&["gradcheck", "--out", s(dir.path())]);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    let results = read_json(&dir.path().join("gradcheck.json"));
    let results = results.as_object().unwrap();
    assert!(results.len() >= 7);
    for (name, r) in results {
        assert_eq!(r["passed"], true, "{name}");
        assert_eq!(r["points"], 100, "{name}");
    }
    // every layer, not just the composite model, meets the layer tolerance
    for (name, r) in results.iter().filter(|(n, _)| *n != "full_model") {
        assert!(r["max_rel_error"].as_f64().unwrap() < 1e-5, "{name}");
    }
}

#[test]
fn zero_epoch_train_matches_eval() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--set", "gen_data.count=30", "--seed", "3", "--out", s(&data)]);
    let train_dir = dir.path().join("train");
    ok(&["train", "--dataset", s(&data), "--set", "train.epochs=0", "--seed", "3", "--out", s(&train_dir)]);
    let eval_dir = dir.path().join("eval");
    let checkpoint = train_dir.join("model.json");
    ok(&["eval", "--dataset", s(&data), "--checkpoint", s(&checkpoint), "--out", s(&eval_dir)]);

    let trained = fs::read(train_dir.join("metrics.csv")).unwrap();
    let evaluated = fs::read(eval_dir.join("metrics.csv")).unwrap();
    assert_eq!(trained, evaluated);
    let report = read_json(&train_dir.join("report.json"));
    assert_eq!(report["epochs_run"], 0);
    assert_eq!(report["final_metrics"], read_json(&eval_dir.join("eval.json")));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = TempDir::new().unwrap();
    let config = dir.path().join("config.json");
    fs::write(&config, r#"{"train": {"epochs": 1, "learning_rte": 0.1}}"#).unwrap();
    let out = lapool(&["gen-data", "--config", s(&config), "--out", s(&dir.path().join("o"))]);
    let err = error_json(&out);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(err["error"]["kind"], "config");
    assert!(err["error"]["message"].as_str().unwrap().contains("learning_rte"));

    let out = lapool(&["signal-demo", "--set", "signal_demo.samples=3", "--out", s(dir.path())]);
    assert_eq!(error_json(&out)["error"]["kind"], "config");
}

#[test]
fn missing_inputs_are_reported() {
    let dir = TempDir::new().unwrap();
    let out = lapool(&["train", "--out", s(dir.path())]);
    assert_eq!(error_json(&out)["error"]["kind"], "missing_input");

    let missing = dir.path().join("nope.json");
    let out = lapool(&["pool", "--graph", s(&missing), "--out", s(dir.path())]);
    let err = error_json(&out);
    assert_eq!(err["error"]["kind"], "io");
    assert_eq!(out.status.code(), Some(1));

    let out = lapool(&["frobnicate"]);
    assert_eq!(error_json(&out)["error"]["kind"], "usage");
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "run_meta.json")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn reruns_are_byte_identical() {
    let dir = TempDir::new().unwrap();
    let run = |tag: &str| {
        let root = dir.path().join(tag);
        let data = root.join("data");
        let train = root.join("train");
        let explain = root.join("explain");
        let signal = root.join("signal");
        let data_s = s(&data).to_string();
        ok(&["gen-data", "--set", "gen_data.count=20", "--seed", "5", "--out", &data_s]);
        ok(&[
            "train", "--dataset", &data_s, "--seed", "5", "--set", "train.epochs=2", "--set", "train.patience=2",
            "--set", "train.architecture.pre_pool=[8]", "--set", "train.architecture.post_pool=[8]",
            "--out", s(&train),
        ]);
        let graph = data.join("graph_00000.json");
        ok(&[
            "explain", "--checkpoint", s(&train.join("model.json")), "--graph", s(&graph),
            "--set", "explain.ig.steps=32", "--out", s(&explain),
        ]);
        ok(&["signal-demo", "--set", "signal_demo.seeds=10", "--out", s(&signal)]);
        [data, train, explain, signal]
    };
    let a = run("a");
    let b = run("b");
    for (x, y) in a.iter().zip(&b) {
        let (sx, sy) = (snapshot(x), snapshot(y));
        assert!(!sx.is_empty());
        let names: Vec<&String> = sx.iter().map(|(n, _)| n).collect();
        assert_eq!(names, sy.iter().map(|(n, _)| n).collect::<Vec<_>>());
        for ((name, bx), (_, by)) in sx.iter().zip(&sy) {
            if name == "resolved_config.json" {
                continue; // paths differ between the two roots
            }
            assert!(bx == by, "{name} differs between reruns in {}", x.display());
        }
    }
    let meta = read_json(&a[1].join("run_meta.json"));
    assert_eq!(meta["command"], "train");
    assert!(meta["started"].is_string());
    let report = read_json(&a[2].join("attribution.json"));
    assert_eq!(report["steps"], 32);
    assert_eq!(report["model_id"].as_str().unwrap().len(), 16);
    assert!(fs::read_to_string(a[2].join("attribution.dot")).unwrap().starts_with("graph attribution {"));
}
