use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn predex(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_predex")).current_dir(dir).args(args).output().expect("spawn predex")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

const LEXICON: &str = r#"
seed = 3

[model]
backend = "lexicon"

[[instances]]
id = "r1"
text = "I love this movie so much"

[[instances]]
id = "r2"
text = "a dull plot and terrible acting"
"#;

fn setup(config: &str) -> tempfile::TempDir {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("run.toml"), config).unwrap();
    tmp
}

#[test]
fn lime_document_has_one_weight_per_token() {
    let tmp = setup(LEXICON);
    let o = predex(tmp.path(), &["--config", "run.toml", "--out", "lime.json", "explain", "--technique", "lime"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&fs::read(tmp.path().join("lime.json")).unwrap()).unwrap();
    assert_eq!(doc["kind"], "attribution");
    assert_eq!(doc["payload"]["weights"].as_array().unwrap().len(), 6);
    assert_eq!(doc["space"]["instance_ref"], "r1");
    assert_eq!(doc["provenance"]["config"]["seed"], 3);
    // the rendering goes to stdout after the file is written
    assert!(String::from_utf8_lossy(&o.stdout).contains("love"));
}

#[test]
fn same_seed_same_bytes() {
    let tmp = setup(LEXICON);
    for out in ["a.json", "b.json"] {
        let o = predex(tmp.path(), &["--config", "run.toml", "--out", out, "explain", "--technique", "unified", "--instance", "r2"]);
        assert_eq!(code(&o), 0);
    }
    assert_eq!(fs::read(tmp.path().join("a.json")).unwrap(), fs::read(tmp.path().join("b.json")).unwrap());
    let o = predex(tmp.path(), &["--config", "run.toml", "--seed", "4", "--out", "c.json", "explain", "--technique", "kshap"]);
    assert_eq!(code(&o), 0);
    let c: Value = serde_json::from_slice(&fs::read(tmp.path().join("c.json")).unwrap()).unwrap();
    assert_eq!(c["provenance"]["seed"], 4);
}

#[test]
fn evaluate_writes_report_and_curve() {
    let tmp = setup(LEXICON);
    let o = predex(tmp.path(), &["--config", "run.toml", "--out", "out/report.json", "--jobs", "2", "evaluate", "--technique", "kshap"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(tmp.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_samples"], 1000);
    let ids: Vec<&str> = report["instances"].as_array().unwrap().iter().map(|i| i["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["r1", "r2"]);
    let csv = fs::read_to_string(tmp.path().join("out/aopc.csv")).unwrap();
    let ks: Vec<&str> = csv.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(ks, ["10", "20", "30", "40", "50", "60", "70", "80", "90", "100"]);
}

#[test]
fn evaluate_saved_anchor() {
    let tmp = setup(LEXICON);
    let o = predex(tmp.path(), &["--config", "run.toml", "--out", "anchor.json", "explain", "--technique", "anchors"]);
    assert!(matches!(code(&o), 0 | 4));
    let o = predex(
        tmp.path(),
        &["--config", "run.toml", "--out", "eval.json", "evaluate", "--explanation", "anchor.json", "--metrics", "coverage,precision", "--n", "500"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(tmp.path().join("eval.json")).unwrap()).unwrap();
    let r = &report["instances"][0]["report"];
    assert_eq!(r["coverage"]["n"], 500);
    assert!(r["precision"]["estimate"].as_f64().unwrap() >= 0.9);
    assert!(r.get("aopc_curve").is_none());
}

#[test]
fn aopc_without_probabilities() {
    let config = LEXICON.replace("backend = \"lexicon\"", "backend = \"lexicon\"\nprobabilities = false");
    let tmp = setup(&config);
    let o = predex(tmp.path(), &["--config", "run.toml", "evaluate", "--technique", "lime", "--metrics", "aopc"]);
    assert_eq!(code(&o), 5, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unsupported metric"));
    // without an explicit request the metric is skipped
    let o = predex(tmp.path(), &["--config", "run.toml", "--out", "r.json", "evaluate", "--technique", "lime", "--n", "100"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&fs::read(tmp.path().join("r.json")).unwrap()).unwrap();
    let skipped = report["instances"][0]["skipped"].as_array().unwrap();
    assert!(skipped.iter().any(|s| s.as_str().unwrap().starts_with("aopc:")), "{skipped:?}");
    assert!(report["instances"][0]["report"]["accuracy_a"].is_number());
}

#[test]
fn offline_fixture_miss_is_a_backend_error() {
    let tmp = setup(
        r#"
[paths]
fixtures = "fixtures"

[model]
backend = "http"
url = "http://127.0.0.1:9/predict"

[[instances]]
id = "r1"
text = "fine"
"#,
    );
    let o = predex(tmp.path(), &["--config", "run.toml", "--offline", "explain", "--technique", "lime"]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("fixture miss"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = setup("[model]\nbackend = \"lexicon\"\nbogus = 1\n");
    let o = predex(tmp.path(), &["--config", "run.toml", "explain", "--technique", "lime"]);
    assert_eq!(code(&o), 2);
    let o = predex(tmp.path(), &["--config", "missing.toml", "explain", "--technique", "lime"]);
    assert_eq!(code(&o), 2);
    let o = predex(tmp.path(), &["oracle-check", "--suite", "nope"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn shapley_oracle_suite_passes() {
    let tmp = tempfile::tempdir().unwrap();
    let o = predex(tmp.path(), &["oracle-check", "--suite", "shapley"]);
    assert_eq!(code(&o), 0);
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("shapley") && out.contains("PASS"), "{out}");
}

#[test]
fn image_instance_writes_segment_png() {
    let tmp = setup(
        r#"
[model]
backend = "color"
task = "image-multiclass"

[predicates.segments]
cell = 8

[[instances]]
id = "img"
image = "img.png"
"#,
    );
    let img = image::RgbImage::from_fn(32, 32, |x, _| if x < 16 { image::Rgb([220, 30, 30]) } else { image::Rgb([30, 30, 220]) });
    img.save(tmp.path().join("img.png")).unwrap();
    let o = predex(tmp.path(), &["--config", "run.toml", "--out", "img.json", "explain", "--technique", "kshap"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let doc: Value = serde_json::from_slice(&fs::read(tmp.path().join("img.json")).unwrap()).unwrap();
    assert_eq!(doc["space"]["kind"], "feature-level");
    let labels = image::open(tmp.path().join("img.segments.png")).unwrap();
    assert_eq!((labels.width(), labels.height()), (32, 32));
}
