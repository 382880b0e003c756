use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "[dataset]\nn_samples = 40\nn_test = 20\nseed = 3\n[partition]\nn_bins = 2\neps = 0.05\n";

fn quadgp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_quadgp")).args(args).current_dir(dir).output().unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

fn trained() -> tempfile::TempDir {
    let dir = setup();
    let d = dir.path();
    assert!(quadgp(d, &["--config", "run.toml", "generate", "--out", "train.jsonl"]).status.success());
    let out = quadgp(d, &["--config", "run.toml", "train", "--dataset", "train.jsonl", "--out", "m.ggps"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir
}

#[test]
fn generate_is_deterministic_and_has_header() {
    let dir = setup();
    let d = dir.path();
    for name in ["a.jsonl", "b.jsonl"] {
        assert!(quadgp(d, &["--config", "run.toml", "generate", "--out", name]).status.success());
    }
    let a = std::fs::read_to_string(d.join("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read_to_string(d.join("b.jsonl")).unwrap());
    assert_eq!(a.lines().count(), 41);
    assert!(a.lines().next().unwrap().contains("\"schema_version\":1"));

    assert!(quadgp(d, &["--config", "run.toml", "--seed", "4", "generate", "--out", "c.jsonl"]).status.success());
    assert_ne!(a, std::fs::read_to_string(d.join("c.jsonl")).unwrap());
}

#[test]
fn inverted_bounds_exit_with_validation_code() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "[dataset.bounds]\npitch_deg = [30.0, -30.0]\n").unwrap();
    let out = quadgp(dir.path(), &["--config", "bad.toml", "generate", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("pitch_deg"));
}

#[test]
fn unknown_config_key_is_a_validation_error() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.toml"), "[kernel]\nlengthscale = 0.5\n").unwrap();
    let out = quadgp(dir.path(), &["--config", "bad.toml", "generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_dataset_is_a_runtime_error() {
    let dir = setup();
    let out = quadgp(dir.path(), &["--config", "run.toml", "train", "--dataset", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn training_is_byte_identical_across_runs() {
    let dir = trained();
    let d = dir.path();
    assert!(quadgp(d, &["--config", "run.toml", "train", "--dataset", "train.jsonl", "--out", "m2.ggps"])
        .status
        .success());
    let a = std::fs::read(d.join("m.ggps")).unwrap();
    assert_eq!(&a[..4], b"GGPS");
    assert_eq!(a, std::fs::read(d.join("m2.ggps")).unwrap());
}

#[test]
fn predict_handles_empty_bad_and_out_of_range_queries() {
    let dir = trained();
    let d = dir.path();

    std::fs::write(d.join("empty.jsonl"), "").unwrap();
    let out = quadgp(d, &["predict", "--artifact", "m.ggps", "--queries", "empty.jsonl", "--out", "p0.jsonl"]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_to_string(d.join("p0.jsonl")).unwrap(), "");

    std::fs::write(d.join("bad.jsonl"), "not json\n{\"r\": [1, 2]}\n").unwrap();
    let out = quadgp(d, &["predict", "--artifact", "m.ggps", "--queries", "bad.jsonl", "--out", "p1.jsonl"]);
    assert_eq!(out.status.code(), Some(1));

    let inside = r#"{"r":[3500,3500,3500,3500],"psi":10,"theta":5,"phi":-5,"v":[5,2,0]}"#;
    let outside = r#"{"r":[9000,9000,9000,9000],"psi":0,"theta":0,"phi":0,"v":[40,0,0]}"#;
    std::fs::write(d.join("q.jsonl"), format!("{inside}\nnot json\n{outside}\n")).unwrap();
    let out = quadgp(d, &["predict", "--artifact", "m.ggps", "--queries", "q.jsonl", "--out", "p2.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = std::fs::read_to_string(d.join("p2.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["extrapolated"], false);
    assert_eq!(lines[1]["extrapolated"], true);
    assert_eq!(lines[0]["mean"].as_array().unwrap().len(), 9);
    assert_eq!(lines[0]["std"].as_array().unwrap().len(), 9);
}

#[test]
fn bench_and_compare_run_on_a_tiny_model() {
    let dir = trained();
    let d = dir.path();
    let out = quadgp(d, &["bench", "--artifact", "m.ggps", "--n-queries", "50"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("median"));

    assert!(quadgp(d, &["--config", "run.toml", "generate", "--kind", "test", "--out", "test.jsonl"]).status.success());
    let out = quadgp(
        d,
        &["--config", "run.toml", "compare", "--dataset", "train.jsonl", "--test", "test.jsonl", "--out", "r.csv"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let gap: f64 = stdout
        .lines()
        .find_map(|l| l.split("max normalized mean gap ").nth(1))
        .expect("equivalence line")
        .trim()
        .parse()
        .unwrap();
    assert!(gap < 1e-8, "{gap}");
    let csv = std::fs::read_to_string(d.join("r.csv")).unwrap();
    assert!(csv.starts_with("variant,output_dim,median_abs_err,p95_abs_err,train_s,predict_ms_median\n"));
    // the 8x set is absent, so that variant is reported as skipped
    assert!(csv.contains("GP-S-8X,all,skipped"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("GP-G-S-Schur,")).count(), 9);
}
