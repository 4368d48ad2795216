use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use tempfile::TempDir;

fn lipembed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lipembed"))
        .args(args)
        .env("LIPEMBED_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// One short logistic run shared by the tests below.
fn short_run() -> &'static Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = TempDir::new().unwrap();
        let out = dir.path().join("run");
        let o = lipembed(&["run", "--preset", "logistic_short", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
        dir
    })
    .path()
}

#[test]
fn witness_commands_pass() {
    let o = lipembed(&["witness", "e_du", "--l", "4", "--m", "3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("PASS e_du l=4 m=3"));

    let o = lipembed(&["witness", "shifted", "--n", "9", "--l", "6", "--m", "3", "--json"]);
    assert_eq!(o.status.code(), Some(0));
    let doc: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(doc["families"].as_array().unwrap().len(), 3);
}

#[test]
fn impossible_witness_is_a_usage_or_input_error() {
    let o = lipembed(&["witness", "e_du", "--l", "2", "--m", "2"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(!o.stderr.is_empty());
}

#[test]
fn run_writes_artifacts_and_verify_agrees() {
    let run = short_run().join("run");
    for f in ["config.json", "report.json", "report.txt", "samples.json", "pipeline.json"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let o = lipembed(&["verify", run.to_str().unwrap(), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    let report: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let names: Vec<&str> =
        report["body"]["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert!(names.contains(&"grid_lipschitz") && names.contains(&"injectivity_margin"));
}

#[test]
fn export_writes_csv() {
    let run = short_run().join("run");
    let out = short_run().join("csv");
    let o = lipembed(&["export", run.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    let lines = std::fs::read_to_string(out.join("lines.csv")).unwrap();
    assert_eq!(lines.lines().next(), Some("point,t,value"));
    assert_eq!(lines.lines().count(), 1 + 21 * 4001);
    assert!(out.join("stages.csv").is_file());
}

#[test]
fn verify_on_empty_directory_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let o = lipembed(&["verify", dir.path().to_str().unwrap(), "--preset", "logistic"]);
    assert_eq!(o.status.code(), Some(2));
    let o = lipembed(&["verify", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_artifact_and_bad_config_exit_2() {
    let dir = TempDir::new().unwrap();
    std::fs::write(dir.path().join("samples.json"), "{not json").unwrap();
    let o = lipembed(&["verify", dir.path().to_str().unwrap(), "--preset", "logistic"]);
    assert_eq!(o.status.code(), Some(2));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"flow":{"name":"logistic"},"net":{"mesh":0.1},"delta0":1.5,"seed":1}"#).unwrap();
    let o = lipembed(&["run", "--config", cfg.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let o = lipembed(&["run", "--preset", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn tampered_line_fails_lipschitz_with_witness() {
    let src = short_run().join("run");
    let dir = TempDir::new().unwrap();
    std::fs::copy(src.join("config.json"), dir.path().join("config.json")).unwrap();
    let mut samples: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(src.join("samples.json")).unwrap()).unwrap();
    let v = &mut samples["lines"][5][2000];
    *v = serde_json::json!(v.as_f64().unwrap() + 0.1);
    std::fs::write(dir.path().join("samples.json"), serde_json::to_string(&samples).unwrap()).unwrap();

    let o = lipembed(&["verify", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let text = stdout(&o);
    let line = text.lines().find(|l| l.contains("grid_lipschitz")).unwrap();
    assert!(line.starts_with("FAIL"), "{line}");
    assert!(line.contains("witness: point 5"), "{line}");
}
