//! End-to-end acceptance: the full pipeline on the realizable plant must run
//! green within its time budget, and the command surface must honor its
//! exit-code and determinism contracts.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shwmpc"))
}

fn run_in(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = bin().args(args).arg("--out").arg(dir).output().expect("spawn shwmpc");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn acceptance_13_end_to_end_pipeline() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_e2e_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();

    let start = Instant::now();
    for (args, label) in [
        (vec!["generate"], "generate"),
        (vec!["train"], "train"),
        (vec!["sweep", "--check"], "sweep --check"),
        (vec!["mpc", "--check"], "mpc --check"),
    ] {
        let (code, stdout, stderr) = run_in(&tmp, &args);
        assert_eq!(code, 0, "{label} exited {code}\nstdout:\n{stdout}\nstderr:\n{stderr}");
    }
    let elapsed = start.elapsed();

    // tracking error from the mpc run report
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.join("run_mpc.json")).unwrap()).unwrap();
    let err = report["metrics"]["max_tracking_error_rel_span"].as_f64().unwrap();
    let pass = err <= 0.01 && elapsed.as_secs_f64() < 1200.0;
    println!(
        "[{}] acceptance 13 end-to-end: pipeline {elapsed:?} (< 20 min), settled tracking error {err:.5} of span (<= 0.01)",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "tracking error {err} or time {elapsed:?} out of budget");

    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn malformed_config_exits_2_naming_the_key() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_cfg_{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();
    let cfg = tmp.join("bad.json");
    std::fs::write(&cfg, r#"{"plannt": {"mode": "realizable"}}"#).unwrap();
    let out = bin()
        .args(["generate", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&tmp)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("plannt"), "stderr must name the offending key: {stderr}");
    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn unknown_command_and_bad_flags_exit_2() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_flags_{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();
    let (code, _, _) = run_in(&tmp, &["frobnicate"]);
    assert_eq!(code, 2);
    let out = bin().args(["generate", "--seed", "notanumber"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn solve_is_byte_deterministic() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_det_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();

    // short pipeline: small dataset and training budget
    let fast = [
        "--set",
        "plant.duration=30",
        "--set",
        "ident.epochs=40",
    ];
    let (code, _, stderr) =
        run_in(&tmp, &[&["generate"], &fast[..]].concat());
    assert_eq!(code, 0, "{stderr}");
    let (code, _, stderr) = run_in(&tmp, &[&["train"], &fast[..]].concat());
    assert_eq!(code, 0, "{stderr}");

    let (code, _, _) = run_in(&tmp, &["solve"]);
    assert_eq!(code, 0);
    let first = std::fs::read(tmp.join("solve.csv")).unwrap();
    let (code, _, _) = run_in(&tmp, &["solve"]);
    assert_eq!(code, 0);
    let second = std::fs::read(tmp.join("solve.csv")).unwrap();
    assert_eq!(first, second, "solve.csv must be byte-identical across reruns");

    // dataset regeneration is byte-identical too
    let before = std::fs::read(tmp.join("dataset.csv")).unwrap();
    let (code, _, _) = run_in(&tmp, &[&["generate"], &fast[..]].concat());
    assert_eq!(code, 0);
    let after = std::fs::read(tmp.join("dataset.csv")).unwrap();
    assert_eq!(before, after);

    // sweep output does not depend on the worker-thread cap
    let sweep_args = ["sweep", "--set", "sweep.points=16"];
    let out = bin()
        .args(sweep_args)
        .arg("--out")
        .arg(&tmp)
        .env("SHWMPC_THREADS", "1")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let serial = std::fs::read(tmp.join("sweep.csv")).unwrap();
    let out = bin()
        .args(sweep_args)
        .arg("--out")
        .arg(&tmp)
        .env("SHWMPC_THREADS", "4")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(0));
    let parallel = std::fs::read(tmp.join("sweep.csv")).unwrap();
    assert_eq!(serial, parallel, "sweep.csv must not depend on SHWMPC_THREADS");

    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn failed_check_exits_4() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_chk_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    // two epochs cannot reach the noiseless validation-loss threshold
    let fast = ["--set", "plant.duration=30", "--set", "ident.epochs=2"];
    let (code, _, stderr) = run_in(&tmp, &[&["generate"], &fast[..]].concat());
    assert_eq!(code, 0, "{stderr}");
    let (code, stdout, _) = run_in(&tmp, &[&["train", "--check"], &fast[..]].concat());
    assert_eq!(code, 4, "under-trained model must fail its check\n{stdout}");
    assert!(stdout.contains("[FAIL]"), "{stdout}");
    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn artifacts_embed_config_hash_and_seed() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_hash_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let fast = ["--set", "plant.duration=30", "--set", "ident.epochs=5"];
    let (code, _, stderr) = run_in(&tmp, &[&["generate"], &fast[..]].concat());
    assert_eq!(code, 0, "{stderr}");
    let (code, _, stderr) = run_in(&tmp, &[&["train"], &fast[..]].concat());
    assert_eq!(code, 0, "{stderr}");

    let gen_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.join("run_generate.json")).unwrap())
            .unwrap();
    let train_report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.join("run_train.json")).unwrap())
            .unwrap();
    let model: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.join("model.json")).unwrap()).unwrap();
    let hash = gen_report["config_hash"].as_str().unwrap();
    assert_eq!(hash, train_report["config_hash"].as_str().unwrap());
    assert_eq!(hash, model["config_hash"].as_str().unwrap());
    assert_eq!(gen_report["seed"].as_u64().unwrap(), 42);
    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn cbf_pipeline_runs_green() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_cbf_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let opts = [
        "--set",
        "arch.xi_depends_on_v=false",
        "--set",
        "plant.duration=40",
        "--set",
        "ident.epochs=60",
        "--set",
        "cbf.steps=1000",
    ];
    for cmd in ["generate", "train"] {
        let (code, _, stderr) = run_in(&tmp, &[&[cmd], &opts[..]].concat());
        assert_eq!(code, 0, "{cmd}: {stderr}");
    }
    let (code, stdout, stderr) =
        run_in(&tmp, &[&["cbf", "--check"], &opts[..]].concat());
    assert_eq!(code, 0, "cbf: {stdout}{stderr}");
    assert!(stdout.contains("[PASS]"));
    let _ = std::fs::remove_dir_all(&tmp);
}

#[test]
fn cbf_rejects_models_with_the_v_path() {
    let tmp = std::env::temp_dir().join(format!("shwmpc_cbfneg_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&tmp);
    std::fs::create_dir_all(&tmp).unwrap();
    let opts = ["--set", "plant.duration=30", "--set", "ident.epochs=2"];
    for cmd in ["generate", "train"] {
        let (code, _, stderr) = run_in(&tmp, &[&[cmd], &opts[..]].concat());
        assert_eq!(code, 0, "{cmd}: {stderr}");
    }
    let (code, _, stderr) = run_in(&tmp, &["cbf"]);
    assert_eq!(code, 2, "cbf on a v-dependent model must be a config error: {stderr}");
    assert!(stderr.contains("xi_depends_on_v"));
    let _ = std::fs::remove_dir_all(&tmp);
}
