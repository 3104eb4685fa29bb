//! Drives the `simgym` binary through its subcommands and exit codes.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn simgym(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_simgym")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn synth(dir: &Path) -> String {
    let out = dir.to_str().unwrap();
    let o = simgym(&["synth", "--out", out, "--treatment", "deeper", "--treatment", "identical", "--buyers", "60", "--agents", "10", "--repeat", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    dir.join("run.toml").to_str().unwrap().to_string()
}

#[test]
fn stages_in_order_with_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());

    let o = simgym(&["--config", &cfg, "cluster"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("simgym ingest"), "{}", stderr(&o));

    for stage in ["ingest", "cluster", "personas", "simulate", "evaluate", "report"] {
        let o = simgym(&["--config", &cfg, "--workers", "2", stage]);
        assert!(o.status.success(), "{stage}: {}", stderr(&o));
        assert!(stdout(&o).starts_with(&format!("{stage}: wrote")), "{}", stdout(&o));
    }
    let o = simgym(&["--config", &cfg, "ingest"]);
    assert_eq!(stdout(&o), "ingest: up-to-date\n");
    let summary = fs::read_to_string(dir.path().join("out/report/summary.md")).unwrap();
    assert!(summary.contains("| Correlation | Alignment | Alignment Prob. |"));

    let o = simgym(&["--config", &cfg, "bootstrap"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--repeat 2"));

    fs::write(dir.path().join("out/simulate/manifest.json"), "garbage").unwrap();
    let o = simgym(&["--config", &cfg, "evaluate"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stale manifest"), "{}", stderr(&o));
}

#[test]
fn changed_seed_is_a_config_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    assert!(simgym(&["--config", &cfg, "ingest"]).status.success());
    let o = simgym(&["--config", &cfg, "--seed", "99", "cluster"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("different configuration"), "{}", stderr(&o));
}

#[test]
fn validation_errors_exit_two() {
    let o = simgym(&["ingest"]);
    assert_eq!(o.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "output_dir = \"out\"\nshops = []\n").unwrap();
    let o = simgym(&["--config", bad.to_str().unwrap(), "ingest"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("at least one shop"));
}

#[test]
fn runtime_failures_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = synth(dir.path());
    fs::write(dir.path().join("shop1.storefront.json"), "{}").unwrap();
    assert!(simgym(&["--config", &cfg, "ingest"]).status.success());
    assert!(simgym(&["--config", &cfg, "cluster"]).status.success());
    let o = simgym(&["--config", &cfg, "personas"]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
