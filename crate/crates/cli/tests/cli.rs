use std::path::Path;
use std::process::Command;

use psido_cli::artifacts::{Check, Outcome, CHECKS_FILE};

fn psido(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_psido")).args(args).output().unwrap()
}

fn write_checks(dir: &Path, checks: Vec<Check>) {
    std::fs::create_dir_all(dir).unwrap();
    std::fs::write(dir.join(CHECKS_FILE), Outcome { checks, ..Default::default() }.checks_csv()).unwrap();
}

#[test]
fn report_on_empty_dir_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = psido(&["report", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no checks.csv"));
}

#[test]
fn report_single_passing_scan() {
    let dir = tempfile::tempdir().unwrap();
    write_checks(&dir.path().join("scan"), vec![Check::at_most(10, "rank jump", 0.0, 1.0, "rank_ladder.csv")]);
    let out = psido(&["report", dir.path().to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "1/1 pass");
}

#[test]
fn report_itemizes_failures_with_file_and_row() {
    let dir = tempfile::tempdir().unwrap();
    write_checks(&dir.path().join("a"), vec![Check::at_most(2, "spread", 0.1, 0.25, "compose.csv:4")]);
    write_checks(
        &dir.path().join("b"),
        vec![Check::at_most(7, "defect", 1e-7, 1e-5, "routes.csv:2"), Check::at_most(7, "injected", 3.0, 1.0, "routes.csv:9")],
    );
    let out = psido(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.starts_with("2/3 pass"), "{text}");
    let fail: Vec<&str> = text.lines().filter(|l| l.starts_with("FAIL")).collect();
    assert_eq!(fail.len(), 1);
    assert!(fail[0].contains(&format!("b{}checks.csv:3", std::path::MAIN_SEPARATOR)), "{}", fail[0]);
    assert!(fail[0].contains("injected") && fail[0].contains("routes.csv:9"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "scenario = \"symbol-check\"\nseeed = 3\n").unwrap();
    let out = psido(&["--config", cfg.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seeed"));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn unknown_scenario_and_bad_values_are_listed_together() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[grid]\nn = 15\nl = -1.0\n").unwrap();
    let out = psido(&["--config", cfg.to_str().unwrap(), "--scenario", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nope") && err.contains("15") && err.contains("-1"), "{err}");
}

#[test]
fn symbol_check_writes_manifest_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = psido(&["--scenario", "symbol-check", "--seed", "7", "--out", out_dir.to_str().unwrap(), "--summary"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"][0], 7);
    assert_eq!(manifest["config_hash"].as_str().unwrap().len(), 64);
    assert!(String::from_utf8_lossy(&out.stdout).contains("Fourier round trip"));
    let rep = psido(&["report", out_dir.to_str().unwrap()]);
    assert!(rep.status.success());
}
