//! Command-line behavior: exit codes and argument handling.

use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_taxprobe"))
}

#[test]
fn unknown_subcommand_exits_2_with_usage() {
    let out = bin().arg("frobnicate").output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.to_lowercase().contains("usage"), "{stderr}");
}

#[test]
fn unknown_flag_exits_2() {
    let out = bin().args(["gen-world", "--config", "x.toml", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_config_file_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = bin()
        .args(["gen-world", "--config", "/nonexistent/config.toml", "--out"])
        .arg(dir.path())
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("usage error"), "{stderr}");
}

#[test]
fn conflicting_overrides_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "seed = 1\n").unwrap();
    // k larger than the batch size is a contradictory request
    let out = bin()
        .args(["intervene", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.path().join("run"))
        .args(["--k", "64"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn runtime_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "seed = 1\n").unwrap();
    // pretrain without gen-world: the corpus is missing
    let out = bin()
        .args(["pretrain", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(dir.path().join("run"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gen_world_succeeds_and_echoes_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(
        &config,
        "seed = 5\n[world]\nclasses = 2\nentities_per_class = 2\nproperties_per_class = 1\n",
    )
    .unwrap();
    let run = dir.path().join("run");
    let out = bin()
        .args(["gen-world", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(run.join("config.snapshot").exists());
    let snapshot = std::fs::read_to_string(run.join("config.snapshot")).unwrap();
    assert!(snapshot.contains("classes = 2"));
    // seed override is reflected in the snapshot
    let out = bin()
        .args(["gen-world", "--config"])
        .arg(&config)
        .args(["--out"])
        .arg(&run)
        .args(["--seed", "99"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let snapshot = std::fs::read_to_string(run.join("config.snapshot")).unwrap();
    assert!(snapshot.contains("seed = 99"));
}
