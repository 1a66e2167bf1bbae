use std::path::Path;
use std::process::{Command, Output};

fn anchor(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_anchor"))
        .args(args)
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .env_remove("ANCHOR_OUT_ROOT")
        .output()
        .unwrap();
    if !out.status.success() {
        eprintln!("{}", String::from_utf8_lossy(&out.stderr));
    }
    out
}

fn json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generate_fit_rollout_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let gen = |split: &str, n: &str, h: &str| {
        let out = anchor(d, &["generate", "--pde", "burgers1d", "--split", split, "--samples", n, "--horizon", h, "--out", split]);
        assert!(out.status.success());
    };
    gen("train", "3", "0.1");
    gen("test", "2", "0.2");
    let m = json(&d.join("train/manifest.json"));
    assert_eq!(m["trajectories"].as_array().unwrap().len(), 3);

    let out = anchor(d, &["fit-surrogate", "--manifest", "train/manifest.json", "--modes", "4", "--out", "sur.json"]);
    assert!(out.status.success());
    assert!(d.join("sur.bin").exists());

    let out = anchor(
        d,
        &["rollout", "--pde", "burgers1d", "--surrogate-archive", "sur.json", "--ic-manifest", "test/manifest.json", "--horizon", "0.2", "--out-dir", "run"],
    );
    assert!(out.status.code().unwrap() <= 1);
    let summary = json(&d.join("run/summary.json"));
    assert_eq!(summary["samples"].as_array().unwrap().len(), 2);
    assert!(d.join("run/sample_0001/anchor.csv").exists());

    let out = anchor(d, &["evaluate", "--rollout-dir", "run"]);
    assert!(out.status.code().unwrap() <= 1);
    let eval = json(&d.join("run/evaluation.json"));
    assert_eq!(eval["samples"][0]["solver_steps"], summary["samples"][0]["solver_steps"]);
}

#[test]
fn coarse_surrogate_needs_no_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = anchor(tmp.path(), &["fit-surrogate", "--pde", "allen-cahn2d", "--surrogate", "coarse-spectral", "--scheme", "etd1", "--out", "c.json"]);
    assert!(out.status.success());
    let a = json(&tmp.path().join("c.json"));
    assert_eq!(a["factor"], 2);
}

#[test]
fn bad_input_exits_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = anchor(tmp.path(), &["evaluate", "--rollout-dir", "missing"]);
    assert_eq!(out.status.code(), Some(2));
    let out = anchor(tmp.path(), &["fit-surrogate", "--pde", "heat3d", "--surrogate", "coarse-spectral", "--out", "c.json"]);
    assert_eq!(out.status.code(), Some(2));
}
