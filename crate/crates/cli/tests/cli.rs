use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn pdplan(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pdplan"))
        .current_dir(dir)
        .args(args)
        .env_remove("CHECKPOINT_PATH")
        .env_remove("CALIBRATION_PATH")
        .env_remove("GENERATOR_MODE")
        .env_remove("GENERATOR_URL")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Vec<u8> {
    let out = pdplan(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    let line = text.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {text}"))
}

/// Small corpus, checkpoint and calibration in `dir`.
fn prepare(dir: &Path) {
    ok(
        dir,
        &[
            "gen-data",
            "--out",
            "data.jsonl",
            "--n-records",
            "400",
            "--seed",
            "1",
        ],
    );
    ok(
        dir,
        &[
            "train",
            "--data",
            "data.jsonl",
            "--out",
            "ckpt.json",
            "--epochs",
            "1",
            "--lr",
            "0.03",
        ],
    );
    ok(
        dir,
        &[
            "calibrate",
            "--data",
            "data.jsonl",
            "--checkpoint",
            "ckpt.json",
            "--out",
            "cal.json",
        ],
    );
}

#[test]
fn serve_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdplan(dir.path(), &["serve"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
}

#[test]
fn unknown_flag_and_missing_file_fail_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let out = pdplan(dir.path(), &["gen-data", "--out", "x.jsonl", "--bogus"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"]["kind"], "usage");
    let out = pdplan(
        dir.path(),
        &["train", "--data", "missing.jsonl", "--out", "c.json"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"]["kind"], "runtime");
    assert!(err["error"]["message"]
        .as_str()
        .unwrap()
        .contains("missing.jsonl"));
}

#[test]
fn pipeline_outputs_and_simulate_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    prepare(d);

    let cal: Value = serde_json::from_slice(&std::fs::read(d.join("cal.json")).unwrap()).unwrap();
    for key in [
        "epsilon",
        "n_calib",
        "quantile_rank",
        "nonconformity_quantile",
        "epd_threshold",
    ] {
        assert!(cal.get(key).is_some(), "calibration lacks {key}");
    }

    let summary: Value = serde_json::from_slice(&ok(
        d,
        &[
            "histogram",
            "--data",
            "data.jsonl",
            "--checkpoint",
            "ckpt.json",
            "--csv",
            "h.csv",
            "--bins",
            "10",
            "--calibration",
            "cal.json",
        ],
    ))
    .unwrap();
    assert!(summary["eval_coverage"].as_f64().is_some());
    let csv = std::fs::read_to_string(d.join("h.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "bin_lo,bin_hi,count");
    assert_eq!(csv.lines().count(), 11);

    let sweep = ok(
        d,
        &[
            "sweep",
            "--data",
            "data.jsonl",
            "--checkpoint",
            "ckpt.json",
            "--calibration",
            "cal.json",
            "--seeds",
            "0,1",
            "--out",
            "sweep.json",
        ],
    );
    let table = String::from_utf8(sweep).unwrap();
    assert!(table.contains("*all-at-once action generation*"));
    let report: Value =
        serde_json::from_slice(&std::fs::read(d.join("sweep.json")).unwrap()).unwrap();
    assert_eq!(report["reports"].as_array().unwrap().len(), 6);

    let sim = |policy: &str| {
        ok(
            d,
            &[
                "simulate",
                "--checkpoint",
                "ckpt.json",
                "--calibration",
                "cal.json",
                "--data",
                "data.jsonl",
                "--prompt",
                "water the plants",
                "--policy",
                policy,
                "--seed",
                "7",
            ],
        )
    };
    for policy in ["max-epd", "random"] {
        let a = sim(policy);
        assert_eq!(a, sim(policy), "{policy} transcript differs");
        let t: Value = serde_json::from_slice(&a).unwrap();
        assert_eq!(t["status"], "done");
    }

    let scripted = ok(
        d,
        &[
            "simulate",
            "--checkpoint",
            "ckpt.json",
            "--threshold",
            "-1e9",
            "--data",
            "data.jsonl",
            "--prompt",
            "water the plants",
            "--policy",
            "interactive",
            "--choices",
            "0,0,0,0,0,0,0,0",
            "--distractor-rate",
            "0",
        ],
    );
    let t: Value = serde_json::from_slice(&scripted).unwrap();
    assert_eq!(t["status"], "done");
    assert!(!t["executed"].as_array().unwrap().is_empty());
}

#[test]
fn sequential_and_parallel_train_agree() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &["gen-data", "--out", "data.jsonl", "--n-records", "200"],
    );
    ok(
        d,
        &[
            "train",
            "--data",
            "data.jsonl",
            "--out",
            "par.json",
            "--epochs",
            "1",
        ],
    );
    ok(
        d,
        &[
            "--sequential",
            "train",
            "--data",
            "data.jsonl",
            "--out",
            "seq.json",
            "--epochs",
            "1",
        ],
    );
    assert_eq!(
        std::fs::read(d.join("par.json")).unwrap(),
        std::fs::read(d.join("seq.json")).unwrap()
    );
}
