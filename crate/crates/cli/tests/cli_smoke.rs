use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ansconf")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workdir(TempDir);

impl Workdir {
    fn new() -> Self {
        Workdir(tempfile::tempdir().unwrap())
    }

    fn path(&self, name: &str) -> String {
        self.0.path().join(name).to_string_lossy().into_owned()
    }

    fn file(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }

    fn ok(&self, args: &[&str]) {
        let out = run(args);
        assert_eq!(code(&out), 0, "{args:?}: {}", stderr(&out));
    }

    /// idf, labels and features for the bundled fixture.
    fn prepare(&self) {
        let preds = fixture("synthetic_200.jsonl");
        self.ok(&[
            "build-idf",
            "--corpus",
            &fixture("corpus.txt"),
            "--out",
            &self.path("idf.json"),
        ]);
        self.ok(&["label", "--predictions", &preds, "--out", &self.path("labels.jsonl")]);
        self.ok(&[
            "featurize",
            "--predictions",
            &preds,
            "--idf",
            &self.path("idf.json"),
            "--out",
            &self.path("features.csv"),
        ]);
    }
}

#[test]
fn full_pipeline_on_fixture() {
    let w = Workdir::new();
    w.prepare();
    let (features, labels) = (w.path("features.csv"), w.path("labels.jsonl"));
    w.ok(&[
        "select",
        "--features",
        &features,
        "--labels",
        &labels,
        "--params",
        &fixture("params.json"),
        "--out",
        &w.path("selection.json"),
    ]);
    w.ok(&[
        "tune",
        "--features",
        &features,
        "--labels",
        &labels,
        "--grid",
        &fixture("grid.toml"),
        "--selection",
        &w.path("selection.json"),
        "--out",
        &w.path("best.json"),
    ]);
    w.ok(&[
        "train",
        "--features",
        &features,
        "--labels",
        &labels,
        "--params",
        &w.path("best.json"),
        "--selection",
        &w.path("selection.json"),
        "--split",
        "--out",
        &w.path("model.json"),
    ]);
    w.ok(&[
        "eval",
        "--model",
        &w.path("model.json"),
        "--features",
        &features,
        "--labels",
        &labels,
        "--split",
        "--rounds",
        "500",
        "--roc-csv",
        &w.path("roc.csv"),
        "--report",
        &w.path("report.json"),
    ]);
    w.ok(&[
        "explain",
        "--model",
        &w.path("model.json"),
        "--predictions",
        &fixture("synthetic_200.jsonl"),
        "--idf",
        &w.path("idf.json"),
        "--example-id",
        "synth-00001",
        "--out",
        &w.path("x.html"),
    ]);

    let selection: serde_json::Value =
        serde_json::from_slice(&std::fs::read(w.file("selection.json")).unwrap()).unwrap();
    assert_eq!(selection["seed"], 13);
    let best: serde_json::Value = serde_json::from_slice(&std::fs::read(w.file("best.json")).unwrap()).unwrap();
    assert_eq!(best["seed"], 13);
    assert_eq!(best["leaderboard"].as_array().unwrap().len(), 16);

    let html = std::fs::read_to_string(w.file("x.html")).unwrap();
    for line in [
        "Base RC Prediction:",
        "Base RC Score:",
        "Confidence Score:",
        "Query Embedding Gradient Highlighting:",
    ] {
        assert!(html.contains(line), "missing {line}");
    }
    let roc = std::fs::read_to_string(w.file("roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\n"));
}

#[test]
fn eval_report_has_required_keys() {
    let w = Workdir::new();
    w.prepare();
    let (features, labels) = (w.path("features.csv"), w.path("labels.jsonl"));
    w.ok(&[
        "train",
        "--features",
        &features,
        "--labels",
        &labels,
        "--params",
        &fixture("params.json"),
        "--out",
        &w.path("model.json"),
    ]);
    w.ok(&[
        "eval",
        "--model",
        &w.path("model.json"),
        "--features",
        &features,
        "--labels",
        &labels,
        "--rounds",
        "200",
        "--report",
        &w.path("report.json"),
    ]);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(w.file("report.json")).unwrap()).unwrap();
    for key in ["auc_full", "auc_answerable", "best_f1", "p_value", "seed", "baseline"] {
        assert!(report.get(key).is_some(), "missing {key}");
    }
    assert_eq!(report["n_examples"], 200);
    let p = report["p_value"].as_f64().unwrap();
    assert!(p > 0.0 && p <= 1.0);
    assert_eq!(report["baseline"]["score_column"], "alpha_b_top1+alpha_e_top1");
}

#[test]
fn eval_is_reproducible() {
    let w = Workdir::new();
    w.prepare();
    let (features, labels) = (w.path("features.csv"), w.path("labels.jsonl"));
    w.ok(&[
        "train",
        "--features",
        &features,
        "--labels",
        &labels,
        "--params",
        &fixture("params.json"),
        "--out",
        &w.path("model.json"),
    ]);
    for out in ["a.json", "b.json"] {
        w.ok(&[
            "eval",
            "--model",
            &w.path("model.json"),
            "--features",
            &features,
            "--labels",
            &labels,
            "--rounds",
            "300",
            "--seed",
            "5",
            "--report",
            &w.path(out),
        ]);
    }
    assert_eq!(
        std::fs::read(w.file("a.json")).unwrap(),
        std::fs::read(w.file("b.json")).unwrap()
    );
}

#[test]
fn featurize_rejects_k_zero_as_usage_error() {
    let w = Workdir::new();
    let out = run(&[
        "featurize",
        "--predictions",
        &fixture("synthetic_200.jsonl"),
        "--idf",
        "idf.json",
        "--k",
        "0",
        "--out",
        &w.path("f.csv"),
    ]);
    assert_eq!(code(&out), 1);
    let out = run(&[
        "featurize",
        "--predictions",
        "p",
        "--idf",
        "i",
        "--k",
        "17",
        "--out",
        "o",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn usage_errors_and_help() {
    assert_eq!(code(&run(&[])), 1);
    assert_eq!(code(&run(&["label"])), 1);
    assert_eq!(code(&run(&["frobnicate"])), 1);
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
}

#[test]
fn invalid_records_exit_2_with_context() {
    let w = Workdir::new();
    let good = std::fs::read_to_string(fixture("synthetic_200.jsonl")).unwrap();
    let mut lines: Vec<String> = good.lines().take(3).map(String::from).collect();
    lines[2] = lines[2].replace("\"begin_likelihood\":", "\"begin_likelihood\":7.5,\"x\":");
    std::fs::write(w.file("bad.jsonl"), lines.join("\n")).unwrap();
    let out = run(&[
        "label",
        "--predictions",
        &w.path("bad.jsonl"),
        "--out",
        &w.path("l.jsonl"),
    ]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    let err = stderr(&out);
    assert!(err.contains("line 3"), "{err}");
    assert!(err.contains("synth-00002"), "{err}");

    std::fs::write(w.file("broken.jsonl"), "{\"example_id\": \n").unwrap();
    let out = run(&[
        "label",
        "--predictions",
        &w.path("broken.jsonl"),
        "--out",
        &w.path("l.jsonl"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("line 1"));
}

#[test]
fn bad_training_parameters_exit_3() {
    let w = Workdir::new();
    w.prepare();
    std::fs::write(
        w.file("params.json"),
        r#"{"learning_rate": -1.0, "n_trees": 5, "interaction_depth": 2, "min_obs_in_node": 5, "bag_fraction": 1.0, "seed": 1}"#,
    )
    .unwrap();
    let out = run(&[
        "train",
        "--features",
        &w.path("features.csv"),
        "--labels",
        &w.path("labels.jsonl"),
        "--params",
        &w.path("params.json"),
        "--out",
        &w.path("m.json"),
    ]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("learning_rate"));
}

#[test]
fn explain_ansi_to_stdout() {
    let w = Workdir::new();
    w.prepare();
    w.ok(&[
        "train",
        "--features",
        &w.path("features.csv"),
        "--labels",
        &w.path("labels.jsonl"),
        "--params",
        &fixture("params.json"),
        "--out",
        &w.path("model.json"),
    ]);
    let out = run(&[
        "explain",
        "--model",
        &w.path("model.json"),
        "--predictions",
        &fixture("synthetic_200.jsonl"),
        "--example-id",
        "synth-00000",
        "--format",
        "ansi",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert!(text.contains("Confidence Score:"));
    assert!(text.contains("\x1b[48;5;"));
    // no IDF table given, so the IDF features were treated as missing
    assert!(stderr(&out).contains("--idf"));

    let out = run(&[
        "explain",
        "--model",
        &w.path("model.json"),
        "--predictions",
        &fixture("synthetic_200.jsonl"),
        "--example-id",
        "nope",
    ]);
    assert_eq!(code(&out), 1);
}
