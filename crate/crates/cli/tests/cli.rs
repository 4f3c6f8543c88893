use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"{
  "env": {"width_cells": 8, "height_cells": 8, "n_transmitters": 2},
  "energy": {"total_budget_j": 20000},
  "data": {"train_envs": 6, "max_spacing": 4},
  "diffusion": {"timesteps": 20, "hidden_sizes": [32], "train_steps": 12, "eval_every": 6, "n_avg": 1},
  "recurrent": {"hidden": 8, "readout_hidden": [16], "train_steps": 12},
  "eval": {"held_out_envs": 2, "row_spacing": 2},
  "gen_env": {"count": 2},
  "sweep": {"rho_grid": [0.1, 0.3, 0.5, 0.7, 0.9], "envs": 2, "reps": 1},
  "policy": {"scenarios": 2, "rho_grid": [0.2, 0.6], "spacing_grid": [0.0, 1.0]},
  "gdm": {"iterations": 2, "candidates": 4, "pretrain_steps": 5, "updates_per_iteration": 2},
  "ddpg": {"round": 4, "updates_per_round": 2, "minibatch": 4}
}"#;

fn semg(args: &[&str], out: &Path, config: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semg"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("SEMG_OUT")
        .output()
        .expect("binary runs")
}

fn tiny_config(dir: &Path) -> PathBuf {
    let p = dir.join("tiny.json");
    std::fs::write(&p, TINY).unwrap();
    p
}

fn run_dir(out: &Output) -> PathBuf {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    PathBuf::from(String::from_utf8(out.stdout.clone()).unwrap().trim())
}

fn line_count(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn gen_env_is_byte_identical_across_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let a = run_dir(&semg(
        &["gen-env", "--seed", "7"],
        &tmp.path().join("a"),
        &cfg,
    ));
    let b = run_dir(&semg(
        &["gen-env", "--seed", "7"],
        &tmp.path().join("b"),
        &cfg,
    ));
    assert!(a
        .file_name()
        .unwrap()
        .to_str()
        .unwrap()
        .starts_with("gen-env-7-"));
    for seed in [7, 8] {
        for suffix in ["map.csv", "map.pgm", "measurements.csv", "transmitters.csv"] {
            let name = format!("env-{seed}-{suffix}");
            assert_eq!(
                std::fs::read(a.join(&name)).unwrap(),
                std::fs::read(b.join(&name)).unwrap(),
                "{name}"
            );
        }
    }
    let map = std::fs::read_to_string(a.join("env-7-map.csv")).unwrap();
    assert_eq!(map.lines().count(), 8);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(a.join("manifest.json")).unwrap()).unwrap();
    let listed: Vec<&str> = manifest["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let mut present: Vec<String> = std::fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    present.sort();
    assert_eq!(listed, present);
    assert_eq!(manifest["seeds"]["run"], 7);
}

#[test]
fn eval_without_checkpoint_exits_3_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out_root = tmp.path().join("runs");
    let out = semg(&["eval-est"], &out_root, &cfg);
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
    assert!(!out_root.exists() || std::fs::read_dir(&out_root).unwrap().count() == 0);
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out_root = tmp.path().join("runs");
    assert_eq!(
        semg(&["no-such-experiment"], &out_root, &cfg).status.code(),
        Some(2)
    );
    assert_eq!(
        semg(&["gen-env", "env.bogus=1"], &out_root, &cfg)
            .status
            .code(),
        Some(2)
    );
    let bad = tmp.path().join("bad.json");
    std::fs::write(&bad, "{").unwrap();
    assert_eq!(semg(&["gen-env"], &out_root, &bad).status.code(), Some(2));
    assert!(!out_root.exists());
}

#[test]
fn out_root_defaults_to_env_var() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let root = tmp.path().join("from-env");
    let out = Command::new(env!("CARGO_BIN_EXE_semg"))
        .args(["gen-env", "--config"])
        .arg(&cfg)
        .env("SEMG_OUT", &root)
        .output()
        .unwrap();
    assert!(run_dir(&out).starts_with(&root));
}

#[test]
fn train_then_downstream_experiments() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out_root = tmp.path().join("runs");
    let train = run_dir(&semg(&["train-est", "--seed", "1"], &out_root, &cfg));
    assert_eq!(line_count(&train.join("loss.csv")), 13);
    assert_eq!(line_count(&train.join("eval.csv")), 3);
    let ckpt = train.join("denoiser.semg-ckpt");
    assert!(ckpt.is_file());
    let ckpt_arg = format!("eval.checkpoint={}", ckpt.display());

    let sweep = run_dir(&semg(&["sweep-energy", &ckpt_arg], &out_root, &cfg));
    assert_eq!(line_count(&sweep.join("sweep.csv")), 5 + 1);
    let again = run_dir(&semg(&["sweep-energy", &ckpt_arg], &out_root, &cfg));
    assert_ne!(sweep, again);
    assert_eq!(
        std::fs::read(sweep.join("sweep.csv")).unwrap(),
        std::fs::read(again.join("sweep.csv")).unwrap()
    );

    let eval = run_dir(&semg(&["eval-est", &ckpt_arg], &out_root, &cfg));
    assert_eq!(line_count(&eval.join("eval.csv")), 3);

    let policy = run_dir(&semg(&["train-policy", &ckpt_arg], &out_root, &cfg));
    assert_eq!(line_count(&policy.join("grid.csv")), 5);
    assert_eq!(line_count(&policy.join("gdm_history.csv")), 3);
    assert_eq!(line_count(&policy.join("ddpg_curve.csv")), 9);
    assert_eq!(line_count(&policy.join("random_search.csv")), 9);
    let best: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(policy.join("best_actions.json")).unwrap())
            .unwrap();
    assert_eq!(best["budget"]["ddpg"], 8);

    let cmp = run_dir(&semg(&["compare-baselines", &ckpt_arg], &out_root, &cfg));
    assert_eq!(line_count(&cmp.join("compare.csv")), 3);
    assert_eq!(line_count(&cmp.join("summary.csv")), 5);
}
