//! End-to-end checks of the command-line contract: artifact formats,
//! determinism of outputs, and the exit-code mapping.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cpsdetect"))
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("cpsdetect-cli-{name}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary must run")
}

fn simulate_csv(dir: &Path, name: &str, t_len: usize, amp: f64, freq: f64, seed: u64, anomalies: bool) -> PathBuf {
    let path = dir.join(name);
    let t = t_len.to_string();
    let amp = amp.to_string();
    let freq = freq.to_string();
    let seed = seed.to_string();
    let mut args = vec![
        "simulate", "--T", &t, "--amp", &amp, "--freq", &freq, "--seed", &seed,
        "--out", path.to_str().unwrap(),
    ];
    if anomalies {
        args.push("--inject-anomalies");
    }
    let out = run(&args);
    assert!(out.status.success(), "simulate failed: {}", String::from_utf8_lossy(&out.stderr));
    path
}

#[test]
fn simulate_row_count_and_determinism() {
    let dir = tmp_dir("simulate");
    let a = simulate_csv(&dir, "a.csv", 500, 1.0, 1.0, 42, false);
    let b = simulate_csv(&dir, "b.csv", 500, 1.0, 1.0, 42, false);
    let text_a = std::fs::read_to_string(&a).unwrap();
    let text_b = std::fs::read_to_string(&b).unwrap();
    assert_eq!(text_a, text_b, "same flags must give byte-identical CSV");
    assert_eq!(text_a.lines().count(), 501, "header plus one row per tick");
    assert!(text_a.starts_with("t,s0,a0,label\n"));
}

#[test]
fn evolve_round_trip_and_determinism() {
    let dir = tmp_dir("evolve");
    let src = simulate_csv(&dir, "src.csv", 200, 1.2, 2.0, 7, false);
    let out1 = dir.join("evo1.csv");
    let out2 = dir.join("evo2.csv");
    for out in [&out1, &out2] {
        let res = run(&[
            "evolve", "--input", src.to_str().unwrap(), "--mode", "mix",
            "--n-devices", "1", "--seed", "5", "--out", out.to_str().unwrap(),
        ]);
        assert!(res.status.success());
    }
    assert_eq!(
        std::fs::read_to_string(&out1).unwrap(),
        std::fs::read_to_string(&out2).unwrap()
    );
}

#[test]
fn eval_reports_threshold_and_metrics() {
    let dir = tmp_dir("eval");
    let scores = dir.join("scores.csv");
    let mut text = String::from("t,score,label\n");
    for i in 0..300 {
        let label = if i % 30 < 3 { 1 } else { 0 };
        let score = if label == 1 { 5.0 + (i % 7) as f64 * 0.1 } else { (i % 13) as f64 * 0.05 };
        text.push_str(&format!("{i},{score},{label}\n"));
    }
    std::fs::write(&scores, text).unwrap();
    let out = run(&["eval", "--scores", scores.to_str().unwrap(), "--delta", "0.05"]);
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    for key in ["pre", "rec", "f1", "tp", "fn", "tn", "fp", "auc", "threshold"] {
        assert!(report.get(key).is_some(), "missing key {key}");
    }
    assert!(report["f1"].as_f64().unwrap() > 0.9, "clearly separated scores: {report}");
}

#[test]
fn run_writes_all_artifacts_and_is_deterministic() {
    let dir = tmp_dir("run");
    let initial = simulate_csv(&dir, "init.csv", 400, 1.0, 1.0, 3, false);
    let task = simulate_csv(&dir, "task1.csv", 360, 1.2, 2.0, 4, true);
    let config = dir.join("config.json");
    std::fs::write(
        &config,
        r#"{
  "window": 8,
  "latent_dim": 4,
  "hidden": 12,
  "seed": 11,
  "task_train_len": 120,
  "train": {"epochs": 2, "lr": 0.001, "meta_lr": 0.001, "episodes": 2, "batch_size": 8},
  "threshold": {"query_points": 200, "delta": 0.05, "memory": 2000}
}"#,
    )
    .unwrap();

    let run_once = |outdir: &Path| {
        let res = run(&[
            "run", "--mode", "all",
            "--config", config.to_str().unwrap(),
            "--initial", initial.to_str().unwrap(),
            "--tasks", task.to_str().unwrap(),
            "--outdir", outdir.to_str().unwrap(),
        ]);
        assert!(
            res.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&res.stderr)
        );
        String::from_utf8(res.stdout).unwrap()
    };

    let out_a = dir.join("out_a");
    let out_b = dir.join("out_b");
    let stdout_a = run_once(&out_a);
    run_once(&out_b);
    assert!(stdout_a.contains("iadcps:"), "per-mode summary on stdout: {stdout_a}");

    for mode in ["static", "it", "iadcps"] {
        for artifact in ["task0_report.json", "task0_scores.csv", "task0_pdf.csv", "task0_roc.csv", "task0_model.json"] {
            let pa = out_a.join(mode).join(artifact);
            let pb = out_b.join(mode).join(artifact);
            assert!(pa.exists(), "missing artifact {}", pa.display());
            assert_eq!(
                std::fs::read(&pa).unwrap(),
                std::fs::read(&pb).unwrap(),
                "artifact must be byte-identical across reruns: {}",
                pa.display()
            );
        }
        let report: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(out_a.join(mode).join("task0_report.json")).unwrap()).unwrap();
        assert!(report["threshold"].as_f64().unwrap().is_finite());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_a.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 11);
    assert_eq!(manifest["modes"].as_array().unwrap().len(), 3);
}

#[test]
fn train_writes_versioned_checkpoint() {
    let dir = tmp_dir("train");
    let data = simulate_csv(&dir, "data.csv", 300, 1.0, 1.0, 9, false);
    let ckpt = dir.join("model.json");
    let res = run(&[
        "train", "--data", data.to_str().unwrap(), "--out", ckpt.to_str().unwrap(),
        "--window", "8", "--epochs", "2", "--lr", "0.001", "--seed", "5",
    ]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&ckpt).unwrap()).unwrap();
    assert_eq!(json["version"], 1);
    assert_eq!(json["model"]["stage"], "standard");
}

#[test]
fn exit_codes_follow_the_contract() {
    // usage error: unknown flag
    let usage = run(&["simulate", "--nope"]);
    assert_eq!(usage.status.code(), Some(1));

    // usage error: bad mode string
    let dir = tmp_dir("exitcodes");
    let src = simulate_csv(&dir, "s.csv", 50, 1.0, 1.0, 1, false);
    let bad_mode = run(&[
        "evolve", "--input", src.to_str().unwrap(), "--mode", "explode",
        "--n-devices", "1", "--out", dir.join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(bad_mode.status.code(), Some(1), "bad mode value is a usage error");

    // data error: missing file
    let missing = run(&[
        "evolve", "--input", "/definitely/not/here.csv", "--mode", "mix",
        "--n-devices", "1", "--out", dir.join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(missing.status.code(), Some(2));

    // data error: malformed CSV names the line
    let bad_csv = dir.join("bad.csv");
    std::fs::write(&bad_csv, "t,s0,a0,label\n0,1.0,2.0,0\n1,oops,2.0,0\n").unwrap();
    let malformed = run(&[
        "evolve", "--input", bad_csv.to_str().unwrap(), "--mode", "mix",
        "--n-devices", "1", "--out", dir.join("o.csv").to_str().unwrap(),
    ]);
    assert_eq!(malformed.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&malformed.stderr);
    assert!(stderr.contains("line 3"), "diagnostic names the line: {stderr}");

    // success path
    let ok = run(&["--help"]);
    assert_eq!(ok.status.code(), Some(0));
}

#[test]
fn help_documents_config_keys_and_defaults() {
    let out = run(&["--help"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "mixup.lambda",
        "threshold.delta",
        "0.05",
        "threshold.query_points",
        "1000",
        "train.lr",
        "0.00001",
        "threshold.memory",
        "10000",
        "CPSDETECT_CONFIG",
    ] {
        assert!(text.contains(needle), "--help must mention {needle}");
    }
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tmp_dir("badconfig");
    let config = dir.join("config.json");
    std::fs::write(&config, r#"{"windoww": 31}"#).unwrap();
    let data = simulate_csv(&dir, "d.csv", 60, 1.0, 1.0, 2, false);
    let res = run(&[
        "train", "--config", config.to_str().unwrap(),
        "--data", data.to_str().unwrap(),
        "--out", dir.join("m.json").to_str().unwrap(),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("windoww"));
}

#[test]
fn config_env_var_supplies_defaults() {
    let dir = tmp_dir("envconfig");
    let config = dir.join("config.json");
    // absurd but visible: tiny simulation length from the env config
    std::fs::write(&config, r#"{"sim": {"t_len": 7}}"#).unwrap();
    let out_path = dir.join("envsim.csv");
    let res = bin()
        .env("CPSDETECT_CONFIG", config.to_str().unwrap())
        .args(["simulate", "--out", out_path.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let text = std::fs::read_to_string(&out_path).unwrap();
    assert_eq!(text.lines().count(), 8, "7 rows plus header");
}
