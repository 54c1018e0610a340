//! End-to-end exercises of the `fineehr` binary: generate a corpus, run a
//! setting over the CSVs, run the ablation grid, inspect artifacts, and
//! check the documented exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fineehr(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fineehr"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

const SMALL_SYNTHETIC: &str = r#"
[data.synthetic]
n_admissions = 60
positive_fraction = 0.5
notes_per_category = [1, 2]
tokens_per_note = [10, 20]
shared_tokens = 80
label_tokens_per_category = 15
seed = 7

[[data.synthetic.categories]]
name = "Physician"
presence_probability = 1.0
signal_strength = 0.6

[[data.synthetic.categories]]
name = "ECG"
presence_probability = 1.0
signal_strength = 0.0

[word2vec]
dim = 8
epochs = 3

[siamese]
epochs = 4

[weighting]
epochs = 30

[classifiers]
kinds = ["logreg"]
logreg_epochs = 100

[run]
seed = 5
seeds = [1]
"#;

#[test]
fn generate_run_ablate_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("config.toml"), SMALL_SYNTHETIC).unwrap();

    // generate: synthetic corpus to CSV files.
    let out = fineehr(
        &["generate", "--config", "config.toml", "--out", "data"],
        root,
    );
    assert!(out.status.success(), "generate failed: {out:?}");
    assert!(root.join("data/notes.csv").exists());
    assert!(root.join("data/admissions.csv").exists());

    // run: consume the generated CSVs instead of the synthetic section.
    let csv_config = r#"
[data]
notes_csv = "data/notes.csv"
admissions_csv = "data/admissions.csv"

[word2vec]
dim = 8
epochs = 3

[siamese]
epochs = 4

[weighting]
epochs = 30

[classifiers]
kinds = ["logreg"]
logreg_epochs = 100

[run]
seed = 5
"#;
    fs::write(root.join("csv_config.toml"), csv_config).unwrap();
    let out = fineehr(
        &[
            "run",
            "--config",
            "csv_config.toml",
            "--setting",
            "full",
            "--out",
            "runout",
        ],
        root,
    );
    assert!(out.status.success(), "run failed: {out:?}");
    for artifact in [
        "report.json",
        "split.json",
        "vocab.json",
        "embeddings.bin",
        "embeddings.json",
        "refiners.json",
        "weights.json",
        "model_logreg.json",
    ] {
        assert!(root.join("runout").join(artifact).exists(), "missing {artifact}");
    }
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("runout/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["setting"], "full");
    assert!(report["metrics"]["logreg"]["auc"].as_f64().unwrap() > 0.0);

    // ablate: four settings, one classifier.
    let out = fineehr(
        &["ablate", "--config", "config.toml", "--out", "ablout"],
        root,
    );
    assert!(out.status.success(), "ablate failed: {out:?}");
    let csv = fs::read_to_string(root.join("ablout/ablation.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "setting,classifier,auc,auc_pr");
    assert_eq!(lines.len(), 1 + 4, "one mean row per setting: {csv}");

    // inspect: prints weights and neighbors from the run output.
    let out = fineehr(&["inspect", "--out", "runout", "--topk", "3"], root);
    assert!(out.status.success(), "inspect failed: {out:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("category weights"), "no weights in: {stdout}");
    assert!(stdout.contains("nearest neighbors"), "no neighbors in: {stdout}");
}

#[test]
fn seed_override_changes_report_seed() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("config.toml"), SMALL_SYNTHETIC).unwrap();
    let out = fineehr(
        &[
            "run",
            "--config",
            "config.toml",
            "--setting",
            "baseline",
            "--seed",
            "99",
            "--out",
            "runout",
        ],
        root,
    );
    assert!(out.status.success(), "run failed: {out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("runout/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["seed"], 99);
}

#[test]
fn set_override_is_applied_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("config.toml"), SMALL_SYNTHETIC).unwrap();
    let out = fineehr(
        &[
            "run",
            "--config",
            "config.toml",
            "--setting",
            "baseline",
            "--set",
            "word2vec.dim=4",
            "--out",
            "runout",
        ],
        root,
    );
    assert!(out.status.success(), "run failed: {out:?}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(root.join("runout/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["config"]["word2vec"]["dim"], 4);
}

#[test]
fn config_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // Both a synthetic section and CSV paths: rejected at validation.
    let bad = format!(
        "{SMALL_SYNTHETIC}\n[data]\nnotes_csv = \"x.csv\"\nadmissions_csv = \"y.csv\"\n"
    );
    fs::write(root.join("bad.toml"), bad).unwrap();
    let out = fineehr(&["run", "--config", "bad.toml", "--out", "o"], root);
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    fs::write(root.join("config.toml"), SMALL_SYNTHETIC).unwrap();
    let out = fineehr(
        &[
            "run",
            "--config",
            "config.toml",
            "--set",
            "word2vec.dims=4",
            "--out",
            "o",
        ],
        root,
    );
    assert_eq!(out.status.code(), Some(2), "{out:?}");
}

#[test]
fn missing_csv_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let config = r#"
[data]
notes_csv = "nope.csv"
admissions_csv = "nope2.csv"
"#;
    fs::write(root.join("config.toml"), config).unwrap();
    let out = fineehr(&["run", "--config", "config.toml", "--out", "o"], root);
    assert_eq!(out.status.code(), Some(3), "{out:?}");
}
