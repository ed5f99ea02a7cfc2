//! Exercises the command-line surface: exit codes, help text, seed
//! precedence, and the generated artifacts.

use std::path::Path;
use std::process::{Command, Output};

fn blvae(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_blvae"));
    cmd.args(args);
    cmd.env_remove("BLVAE_SEED");
    cmd
}

fn stderr_of(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn gradcheck_passes_and_reports_per_seed() {
    let out = blvae(&["gradcheck", "--seed", "1", "--count", "2"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    assert_eq!(text.matches("max relative error").count(), 3, "{text}");
}

#[test]
fn gradcheck_fails_with_exit_4_on_impossible_tolerance() {
    let out = blvae(&["gradcheck", "--count", "1", "--tolerance", "1e-18"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(4), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("numeric error"));
}

#[test]
fn missing_dataset_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = blvae(&["train", "--data"])
        .arg(dir.path().join("nope"))
        .arg("--out")
        .arg(dir.path().join("ck.blvc"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("dataset not found"), "{}", stderr_of(&out));
}

#[test]
fn synth_without_cases_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = blvae(&["synth", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("no cases selected"));
}

#[test]
fn malformed_operating_point_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = blvae(&["synth", "--case", "oops", "--out"])
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", stderr_of(&out));
}

#[test]
fn unknown_config_key_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "bogus_knob = 1\n").unwrap();
    let out = blvae(&["synth", "--case", "1600,0.65", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("d"))
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("unknown config key"));
}

#[test]
fn help_text_states_defaults() {
    // encode takes only required paths; every other subcommand has tunables
    // and each of those must state its default.
    for sub in ["synth", "train", "encode", "classify", "report", "gradcheck"] {
        let out = blvae(&[sub, "--help"]).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8_lossy(&out.stdout).into_owned();
        if sub != "encode" {
            assert!(text.contains("[default:"), "{sub} help lists no defaults");
        }
    }
}

fn manifest_seed(dir: &Path) -> String {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt")).unwrap();
    manifest
        .lines()
        .find(|l| l.starts_with("seed"))
        .unwrap_or_else(|| panic!("no seed line in {manifest}"))
        .to_string()
}

#[test]
fn seed_precedence_is_flag_env_file_default() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "seed = 5\n").unwrap();

    let file_only = dir.path().join("file_only");
    let out = blvae(&["synth", "--case", "1600,0.65", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&file_only)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(manifest_seed(&file_only), "seed = 5");

    let env_over_file = dir.path().join("env_over_file");
    let out = blvae(&["synth", "--case", "1600,0.65", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&env_over_file)
        .env("BLVAE_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(manifest_seed(&env_over_file), "seed = 6");

    let flag_over_env = dir.path().join("flag_over_env");
    let out = blvae(&["synth", "--case", "1600,0.65", "--seed", "7", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&flag_over_env)
        .env("BLVAE_SEED", "6")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert_eq!(manifest_seed(&flag_over_env), "seed = 7");
}

#[test]
fn synth_writes_case_files_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("data");
    let out = blvae(&[
        "synth",
        "--case",
        "1600,0.65",
        "--case",
        "2880,0.95",
        "--duration",
        "0.1",
        "--out",
    ])
    .arg(&out_dir)
    .output()
    .unwrap();
    assert!(out.status.success(), "{}", stderr_of(&out));
    assert!(out_dir.join("q1600_phi065.pmts").is_file());
    assert!(out_dir.join("q2880_phi095.pmts").is_file());
    let manifest = std::fs::read_to_string(out_dir.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("command = synth"), "{manifest}");
    assert!(manifest.contains("cases = q1600_phi065 q2880_phi095"));
}

#[test]
fn bad_seed_env_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = blvae(&["synth", "--case", "1600,0.65", "--out"])
        .arg(dir.path().join("d"))
        .env("BLVAE_SEED", "not-a-number")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3), "{}", stderr_of(&out));
    assert!(stderr_of(&out).contains("configuration error"));
}
