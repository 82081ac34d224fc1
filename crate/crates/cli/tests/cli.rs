use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bridgecap"));
    c.env_remove("BRIDGECAP_OUTPUT_DIR");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&run(dir.path(), &["train", "--epochs", "many"])), 1);
    assert_eq!(code(&run(dir.path(), &[])), 1);
    assert_eq!(code(&run(dir.path(), &["--help"])), 0);
    assert_eq!(code(&run(dir.path(), &["--version"])), 0);
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["nbi-parse", "--nbi", "missing.csv"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.csv"));
    // required path absent from both config and flags
    assert_eq!(code(&run(d, &["nbi-parse"])), 2);
    fs::write(d.join("bad.json"), r#"{"paths": {"nbii": "x.csv"}}"#).unwrap();
    let out = run(d, &["--config", "bad.json", "nbi-parse"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nbii"));
    fs::write(d.join("junk.ckpt"), b"not a model").unwrap();
    assert_eq!(code(&run(d, &["evaluate", "--model", "junk.ckpt"])), 2);
}

#[test]
fn dl2_counts_on_inventory_shaped_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let counts = "928,4674,1913,460,3991,491,3,56,585,310,22,107";
    ok(
        d,
        &[
            "-o",
            "c",
            "synth-gen",
            "--classes",
            "12",
            "--class-counts",
            counts,
            "--labels-only",
        ],
    );
    assert!(!d.join("c/images").exists());
    ok(
        d,
        &[
            "-o",
            "c",
            "corpus-match",
            "--nbi",
            "c/inventory.csv",
            "--manifest",
            "c/manifest.csv",
        ],
    );
    ok(d, &["-o", "c", "dataset-build", "DL2"]);
    let table = fs::read_to_string(d.join("c/dataset_counts.csv")).unwrap();
    let total = table.lines().last().unwrap();
    assert!(total.starts_with("total,,"), "{total}");
    assert_eq!(total.split(',').nth(3), Some("5774"), "{table}");
}

#[test]
fn pipeline_end_to_end_with_reports_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("cfg.json"),
        r#"{
  "dataset": {"name": "bands", "label_source": {"load_rating": {"name": "bands", "edges": [0, 10, 20]}}},
  "model": {"image_size": 16},
  "train": {"max_epochs": 5, "patience": 10},
  "synth": {"classes": 3, "images_per_class": 12, "image_size": 16}
}"#,
    )
    .unwrap();
    let with_env = |args: &[&str]| {
        let out = bin()
            .current_dir(d)
            .env("BRIDGECAP_OUTPUT_DIR", "work")
            .arg("--config")
            .arg("cfg.json")
            .args(args)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    with_env(&["synth-gen"]);
    with_env(&[
        "corpus-match",
        "--nbi",
        "work/inventory.csv",
        "--manifest",
        "work/manifest.csv",
    ]);
    with_env(&["dataset-build"]);
    with_env(&["train", "--epochs", "2"]);
    with_env(&["evaluate"]);
    with_env(&["binarize"]);
    with_env(&["report"]);
    let w = d.join("work");
    // the flag beat the config's five epochs
    assert_eq!(
        fs::read_to_string(w.join("history.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
    for f in [
        "split.csv",
        "model.ckpt",
        "metrics.csv",
        "evaluation.json",
        "binarized.json",
        "report/report.json",
    ] {
        assert!(w.join(f).exists(), "{f}");
    }
    let svgs = |p: &Path| {
        fs::read_dir(p)
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .path()
                    .extension()
                    .is_some_and(|x| x == "svg")
            })
            .count()
    };
    assert_eq!(svgs(&w.join("report")), 0);
    with_env(&["report", "--svg"]);
    assert_eq!(svgs(&w.join("report")), 4);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(w.join("run-train.json")).unwrap()).unwrap();
    assert_eq!(manifest["stage"]["name"], "train");
    assert_eq!(manifest["seeds"]["init"], 0);
    assert!(manifest["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));

    ok(d, &["replay", "work/run-evaluate.json", "-o", "again"]);
    assert_eq!(
        fs::read(w.join("metrics.csv")).unwrap(),
        fs::read(d.join("again/metrics.csv")).unwrap()
    );

    // a recorded digest that no rerun can match is an invariant failure
    let text = fs::read_to_string(w.join("run-report.json")).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["outputs"][0]["sha256"] = serde_json::Value::String("0".repeat(64));
    fs::write(d.join("tampered.json"), serde_json::to_string(&v).unwrap()).unwrap();
    let out = run(d, &["replay", "tampered.json", "-o", "again2"]);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));

    // changed inputs are refused
    fs::write(w.join("split.csv"), "image_path,class,side\n").unwrap();
    assert_eq!(
        code(&run(
            d,
            &["replay", "work/run-evaluate.json", "-o", "again3"]
        )),
        2
    );
}
