use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rlaif_lab::experiment::{parse_config, read_result, BUNDLED, OUT_DIR_VAR};

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rlaif-lab"));
    cmd.env_remove(OUT_DIR_VAR);
    cmd
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

const GAP: &str = "seed = 3\n[experiment]\nkind = \"gap\"\netas = [0.1, 0.5]\nalpha_c = 0.9\nd = 4\n";

/// Result file text without the wall-clock line.
fn numeric_fields(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with("duration_secs"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn run_writes_result_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "gap_run.toml", GAP);
    let out = dir.path().join("out");
    let o = bin().arg("run").arg(&config).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("PASS gap eta=0.1/gap")));

    let result = read_result(&out.join("gap_run.result")).unwrap();
    assert_eq!(result.config, parse_config(GAP).unwrap());
    assert_eq!(result.result.experiment, "gap");
    assert_eq!(result.result.seed, 3);
    assert!(!result.result.version.is_empty());
    assert!(result.result.checks.iter().all(|c| c.passed));

    let csv = fs::read_to_string(out.join("gap_run.gap.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("eta,alpha_c,gap"));
    assert_eq!(lines.count(), 2);
}

#[test]
fn failing_check_exits_one_and_names_the_check() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(
        dir.path(),
        "adv.toml",
        "seed = 1\n[world]\nv_star = [1.0, 0.0]\n[experiment]\nkind = \"adversarial\"\nsubspace = [[-0.8, 0.6]]\nn_samples = 1000\nexpect_projection = 0.5\n",
    );
    let out = dir.path().join("out");
    let o = bin().arg("run").arg(&config).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).lines().any(|l| l.starts_with("FAIL adversarial projection ")), "{}", stdout(&o));
    assert!(out.join("adv.result").exists());
}

#[test]
fn malformed_config_exits_two_without_result() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "bad.toml", "seed = 1\n[experiment\nkind = \"toy\"\n");
    let out = dir.path().join("out");
    let o = bin().arg("run").arg(&config).arg("--out").arg(&out).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("parse error"), "{}", stderr(&o));
    assert!(!out.join("bad.result").exists());
}

#[test]
fn validation_error_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "neg.toml", "seed = 1\n[experiment]\nkind = \"gap\"\netas = [1.5]\nalpha_c = 0.9\nd = 4\n");
    let out = dir.path().join("out");
    for verb in ["run", "validate"] {
        let mut cmd = bin();
        cmd.arg(verb).arg(&config);
        if verb == "run" {
            cmd.arg("--out").arg(&out);
        }
        let o = cmd.output().unwrap();
        assert_eq!(o.status.code(), Some(2), "{verb}");
        assert!(stderr(&o).contains("experiment.etas"), "{}", stderr(&o));
    }
    assert!(!out.exists());

    let missing_seed = write(dir.path(), "noseed.toml", "[experiment]\nkind = \"toy\"\n");
    let o = bin().arg("validate").arg(&missing_seed).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn validate_accepts_every_bundled_config() {
    let dir = tempfile::tempdir().unwrap();
    for (name, text) in BUNDLED {
        let config = write(dir.path(), &format!("{name}.toml"), text);
        let o = bin().arg("validate").arg(&config).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{name}: {}", stderr(&o));
    }
}

#[test]
fn missing_config_file_exits_two() {
    let o = bin().arg("run").arg("/nonexistent/config.toml").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reruns_and_thread_counts_are_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "toy.toml", "seed = 11\n[experiment]\nkind = \"toy\"\nn_samples = 50000\n");
    let mut texts = Vec::new();
    for (k, threads) in ["1", "4", "4"].iter().enumerate() {
        let out = dir.path().join(format!("out{k}"));
        let o = bin().env("RAYON_NUM_THREADS", threads).arg("run").arg(&config).arg("--out").arg(&out).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        texts.push(numeric_fields(&out.join("toy.result")));
    }
    assert_eq!(texts[0], texts[1]);
    assert_eq!(texts[1], texts[2]);
}

#[test]
fn reproduce_all_only_runs_one_kind() {
    let dir = tempfile::tempdir().unwrap();
    let o = bin().args(["reproduce-all", "--only", "gap", "--out"]).arg(dir.path()).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.lines().filter(|l| l.starts_with("PASS") || l.starts_with("FAIL")).all(|l| l.split(' ').nth(1) == Some("gap")));
    assert!(text.contains("across 1 experiments"));
    assert!(dir.path().join("gap.result").exists());
    assert!(!dir.path().join("toy.result").exists());
}

#[test]
fn reproduce_all_seed_override_changes_digits_not_verdicts() {
    let dir = tempfile::tempdir().unwrap();
    let mut results = Vec::new();
    for seed in ["2024", "7"] {
        let out = dir.path().join(seed);
        let o = bin().args(["reproduce-all", "--only", "toy", "--seed", seed, "--out"]).arg(&out).output().unwrap();
        assert_eq!(o.status.code(), Some(0));
        results.push(read_result(&out.join("toy.result")).unwrap().result);
    }
    assert_eq!(results[1].seed, 7);
    assert_ne!(results[0].get("mc_delta"), results[1].get("mc_delta"));
    let verdicts = |r: &rlaif_lab::report::ExperimentResult| r.checks.iter().map(|c| (c.name.clone(), c.passed)).collect::<Vec<_>>();
    assert_eq!(verdicts(&results[0]), verdicts(&results[1]));
}

#[test]
fn unknown_only_kind_exits_two() {
    let o = bin().args(["reproduce-all", "--only", "everything"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--only"));
}

#[test]
fn environment_sets_default_output_directory() {
    let dir = tempfile::tempdir().unwrap();
    let config = write(dir.path(), "gap.toml", GAP);
    let out = dir.path().join("from_env");
    let o = bin().env(OUT_DIR_VAR, &out).arg("run").arg(&config).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join("gap.result").exists());
}
