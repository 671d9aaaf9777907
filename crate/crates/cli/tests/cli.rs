use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lts_core::config::ExperimentConfig;
use lts_core::experiments;

fn lts(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lts"))
        .args(args)
        .env("LTS_OUTPUT_ROOT", root)
        .output()
        .expect("binary runs")
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p
}

const SMALL_GMM: &str = r#"
name = "smoke"
task = "gmm"
iterations = 3
rollouts = 2
dataset_size = 30

[mtm]
epochs = 2

[gmm]
validation_size = 50
test_size = 50

[evaluation]
retrain_size = 30
retrain_epochs = 1
"#;

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn missing_task_is_a_config_error_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "iterations = 3\n");
    for cmd in ["run", "validate-config"] {
        let o = lts(&[cmd, cfg.to_str().unwrap()], dir.path());
        assert_eq!(o.status.code(), Some(2), "{cmd}: {}", stderr(&o));
        assert!(stderr(&o).contains("task"), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn unknown_field_and_bad_override_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "task = \"gmm\"\niteratons = 3\n");
    let o = lts(&["validate-config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("iteratons"), "{}", stderr(&o));

    let cfg = write(dir.path(), "ok.toml", SMALL_GMM);
    let o = lts(
        &["validate-config", cfg.to_str().unwrap(), "--set", "rollouts=0"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("rollouts"), "{}", stderr(&o));
}

#[test]
fn shipped_configs_validate() {
    let dir = tempfile::tempdir().unwrap();
    let mut n = 0;
    for entry in fs::read_dir(configs_dir()).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let o = lts(&["validate-config", path.to_str().unwrap()], dir.path());
            assert!(o.status.success(), "{}: {}", path.display(), stderr(&o));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn shipped_configs_match_their_presets() {
    let read = |name: &str| {
        let text = fs::read_to_string(configs_dir().join(name)).unwrap();
        ExperimentConfig::from_toml_str(&text).unwrap()
    };
    let mut gmm = read("gmm_lts.toml");
    gmm.name = experiments::gmm_config(2).name;
    assert_eq!(gmm, experiments::gmm_config(2));
    let mut traffic = read("traffic_lts.toml");
    traffic.name = experiments::traffic_config().name;
    assert_eq!(traffic, experiments::traffic_config());
}

#[test]
fn one_iteration_run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "smoke.toml", SMALL_GMM);
    let o = lts(
        &["run", cfg.to_str().unwrap(), "--iterations", "1", "--seed", "4"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    // Default output directory comes from the environment variable.
    let out = dir.path().join("smoke-seed4");
    for f in ["config.toml", "history.csv", "summary.json", "manifest.json"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let csv = fs::read_to_string(out.join("history.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("iteration,mean_reward"));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["status"], "ok");
    assert_eq!(manifest["seed"], 4);
    let saved = ExperimentConfig::from_toml_str(&fs::read_to_string(out.join("config.toml")).unwrap()).unwrap();
    assert_eq!(manifest["config_hash"], saved.hash());
    assert_eq!(saved.iterations, 1);
}

fn without_wall_time(csv: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "wall_time_secs").unwrap();
    lines
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells.remove(col);
            cells.join(",")
        })
        .collect()
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "smoke.toml", SMALL_GMM);
    let mut outs = Vec::new();
    // The second run is single-threaded: scheduling must not matter.
    for (name, threads) in [("a", "4"), ("b", "1")] {
        let out = dir.path().join(name);
        let o = lts(
            &[
                "--parallelism",
                threads,
                "run",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
            ],
            dir.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        outs.push(out);
    }
    let read = |p: &Path, f: &str| fs::read_to_string(p.join(f)).unwrap();
    assert_eq!(read(&outs[0], "summary.json"), read(&outs[1], "summary.json"));
    assert_eq!(read(&outs[0], "config.toml"), read(&outs[1], "config.toml"));
    assert_eq!(
        without_wall_time(&read(&outs[0], "history.csv")),
        without_wall_time(&read(&outs[1], "history.csv"))
    );
}

#[test]
fn presets_are_listed_and_unknown_presets_fail() {
    let dir = tempfile::tempdir().unwrap();
    let o = lts(&["presets"], dir.path());
    assert!(o.status.success());
    let listed = String::from_utf8(o.stdout).unwrap();
    for p in experiments::PRESETS {
        assert!(listed.lines().any(|l| l == p), "{p}");
    }
    let o = lts(&["reproduce", "no_such_preset"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_preset"), "{}", stderr(&o));
}

#[test]
fn shortened_reproduce_writes_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let o = lts(
        &[
            "--parallelism",
            "2",
            "reproduce",
            "toy_gmm_1comp",
            "--iterations",
            "1",
            "--seeds",
            "0,1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let out = dir.path().join("toy_gmm_1comp");
    let table = fs::read_to_string(out.join("table.csv")).unwrap();
    assert!(table.contains("1 gaussian"));
    for sub in ["1_gaussian-seed0", "1_gaussian-seed1"] {
        assert!(out.join(sub).join("history.csv").exists(), "{sub}");
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"], serde_json::json!([0, 1]));
    assert_eq!(manifest["status"], "ok");
}
