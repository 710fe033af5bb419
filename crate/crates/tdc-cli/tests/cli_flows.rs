//! End-to-end runs of the `tdc` binary: round trips, determinism, manifest
//! integrity, exit codes.

use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tdc_core::io::{read_tensor4, write_tensor4};
use tdc_core::tensor::{Matrix, Tensor4};
use tdc_core::tucker::{tucker2_reconstruct, TuckerFactors};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tdc")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary launches")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "tdc {:?} failed:\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn exit_code(args: &[&str]) -> i32 {
    run(args).status.code().expect("exit code present")
}

fn sha256_hex(path: &Path) -> String {
    let mut hasher = Sha256::new();
    hasher.update(std::fs::read(path).unwrap());
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn manifest(dir: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// Every digest recorded under `outputs` must match a re-hash of the file.
fn assert_manifest_digests(dir: &Path) {
    let m = manifest(dir);
    let outputs = m["outputs"].as_object().expect("outputs map");
    assert!(!outputs.is_empty());
    for (name, digest) in outputs {
        let actual = sha256_hex(&dir.join(name));
        assert_eq!(digest.as_str().unwrap(), actual, "digest mismatch for {name}");
    }
}

/// A kernel that is exactly rank (2, 2) in its channel modes.
fn low_rank_kernel() -> Tensor4 {
    let c = 6;
    let n = 8;
    let mut u1 = Matrix::zeros(c, 2);
    let mut u2 = Matrix::zeros(n, 2);
    for i in 0..c {
        u1.set(i, 0, ((i + 1) as f64).sin());
        u1.set(i, 1, ((2 * i + 1) as f64).cos());
    }
    for j in 0..n {
        u2.set(j, 0, ((j + 2) as f64).cos());
        u2.set(j, 1, ((3 * j + 1) as f64).sin());
    }
    let core_data: Vec<f64> = (0..2 * 2 * 3 * 3).map(|i| ((i * i + 1) as f64).sin()).collect();
    let factors = TuckerFactors {
        u1,
        u2,
        core: Tensor4::from_vec([2, 2, 3, 3], core_data).unwrap(),
    };
    tucker2_reconstruct(&factors)
}

#[test]
fn decompose_then_reconstruct_round_trips_within_reported_error() {
    let tmp = tempfile::tempdir().unwrap();
    let k_path = tmp.path().join("k.tdct");
    let kernel = low_rank_kernel();
    write_tensor4(&k_path, &kernel).unwrap();

    let dec = tmp.path().join("dec");
    run_ok(&[
        "decompose",
        "--kernel",
        k_path.to_str().unwrap(),
        "--ranks",
        "2,2",
        "--out",
        dec.to_str().unwrap(),
    ]);
    assert_manifest_digests(&dec);
    let reported = manifest(&dec)["result"]["reconstruction_error_rel"]
        .as_f64()
        .unwrap();
    assert!(reported <= 1e-10, "rank-(2,2) kernel should decompose exactly, got {reported:e}");

    run_ok(&["reconstruct", dec.to_str().unwrap()]);
    let k_hat = read_tensor4(&dec.join("recon/k_hat.tdct")).unwrap();
    let rel = kernel.sub(&k_hat).unwrap().frobenius_norm() / kernel.frobenius_norm();
    assert!(
        rel <= reported + 1e-12,
        "round trip error {rel:e} exceeds reported {reported:e}"
    );
    assert_manifest_digests(&dec.join("recon"));
}

#[test]
fn tile_select_plan_feeds_conv_bench_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    let ts = tmp.path().join("ts");
    run_ok(&[
        "tile-select",
        "--shape",
        "8,8,8,8,3,3",
        "--gpu",
        "2080ti",
        "--out",
        ts.to_str().unwrap(),
    ]);
    assert_manifest_digests(&ts);
    let plan: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ts.join("selected.json")).unwrap()).unwrap();

    let mut csv_stripped = Vec::new();
    let mut y_digests = Vec::new();
    for name in ["b1", "b2"] {
        let out = tmp.path().join(name);
        run_ok(&[
            "conv-bench",
            "--shape",
            "8,8,8,8,3,3",
            "--plan",
            ts.join("selected.json").to_str().unwrap(),
            "--repeats",
            "2",
            "--workers",
            "1",
            "--seed",
            "42",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_manifest_digests(&out);
        let m = manifest(&out);
        assert_eq!(
            m["config"]["tiling"], plan["tiling"],
            "bench must use the tiling the selector chose"
        );
        y_digests.push(sha256_hex(&out.join("y.tdct")));
        let csv = std::fs::read_to_string(out.join("bench.csv")).unwrap();
        let stripped: Vec<String> = csv
            .lines()
            .map(|l| l.rsplit_once(',').map(|(head, _)| head.to_string()).unwrap_or_default())
            .collect();
        csv_stripped.push(stripped);
    }
    assert_eq!(y_digests[0], y_digests[1], "output tensor must be byte-identical");
    assert_eq!(
        csv_stripped[0], csv_stripped[1],
        "bench.csv must be identical apart from the wall-clock column"
    );
}

#[test]
fn admm_train_writes_history_and_factors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("train.json");
    std::fs::write(
        &cfg,
        r#"{
            "noise": 1.0, "train_samples": 32, "test_samples": 16,
            "warmup_epochs": 1, "ranks": {"conv2": [3, 3]},
            "alpha": 0.05, "rho": 0.3, "epochs": 2, "batch": 8,
            "admm_period": 0, "seed": 7
        }"#,
    )
    .unwrap();
    let out = tmp.path().join("tr");
    run_ok(&[
        "admm-train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_manifest_digests(&out);
    let history = std::fs::read_to_string(out.join("history.csv")).unwrap();
    let lines: Vec<&str> = history.lines().collect();
    assert_eq!(lines[0], "epoch,loss,train_acc,test_acc,residual_norm");
    assert_eq!(lines.len(), 1 + 1 + 2, "header + warmup + constrained epochs");
    for name in ["conv2_u1.tdct", "conv2_u2.tdct", "conv2_core.tdct"] {
        assert!(out.join(name).exists(), "{name} missing");
    }
    let m = manifest(&out);
    assert_eq!(m["seed"].as_u64(), Some(7), "config seed wins");
    let red = m["result"]["flops_reduction"].as_f64().unwrap();
    assert!(red > 0.69 && red < 0.70, "conv2 (3,3) reduction is 69.4%, got {red}");
}

#[test]
fn rank_select_plan_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let mut digests = Vec::new();
    for name in ["p1", "p2"] {
        let plan = tmp.path().join(name).join("plan.json");
        run_ok(&[
            "rank-select",
            "--arch",
            "toy6",
            "--budget",
            "0.8",
            "--gpu",
            "a100",
            "--workers",
            "1",
            "--out",
            plan.to_str().unwrap(),
        ]);
        digests.push(sha256_hex(&plan));
        assert_manifest_digests(plan.parent().unwrap());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn report_summarizes_ranking() {
    let tmp = tempfile::tempdir().unwrap();
    let ts = tmp.path().join("ts");
    run_ok(&[
        "tile-select",
        "--shape",
        "14,14,16,16,3,3",
        "--divisors-only",
        "--out",
        ts.to_str().unwrap(),
    ]);
    let rows = std::fs::read_to_string(ts.join("ranking.csv")).unwrap().lines().count() - 1;
    let rep = tmp.path().join("rep/report.csv");
    let out = run_ok(&[
        "report",
        "--ranking",
        ts.join("ranking.csv").to_str().unwrap(),
        "--out",
        rep.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("baseline:"), "stdout: {stdout}");
    assert!(stdout.contains("14x14x16x16 3x3"), "shape pulled from sibling manifest");
    let report = std::fs::read_to_string(&rep).unwrap();
    assert_eq!(report.lines().count() - 1, rows, "one report row per candidate");
    assert_eq!(report.lines().next().unwrap(), "shape,scheme,runtime_s,speedup");
}

#[test]
fn outputs_are_guarded_against_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let k_path = tmp.path().join("k.tdct");
    write_tensor4(&k_path, &low_rank_kernel()).unwrap();
    let dec = tmp.path().join("dec");
    let args = [
        "decompose",
        "--kernel",
        k_path.to_str().unwrap(),
        "--ranks",
        "2,2",
        "--out",
        dec.to_str().unwrap(),
    ];
    run_ok(&args);
    let second = run(&args);
    assert_eq!(second.status.code(), Some(1));
    assert!(
        String::from_utf8_lossy(&second.stderr).contains("--force"),
        "refusal should mention --force"
    );
    let mut forced: Vec<&str> = args.to_vec();
    forced.push("--force");
    run_ok(&forced);
}

#[test]
fn exit_codes_classify_failures() {
    let tmp = tempfile::tempdir().unwrap();

    // Usage errors exit 1.
    assert_eq!(exit_code(&["no-such-command"]), 1);
    assert_eq!(
        exit_code(&["decompose", "--kernel", "missing.tdct", "--ranks", "2,2", "--out", "x"]),
        1
    );
    assert_eq!(
        exit_code(&[
            "conv-bench",
            "--shape",
            "8,8,8,8,3,3",
            "--tiling",
            "99,1,1",
            "--out",
            tmp.path().join("cb").to_str().unwrap(),
        ]),
        1
    );
    assert_eq!(
        exit_code(&[
            "rank-select",
            "--arch",
            "toy6",
            "--budget",
            "0.999",
            "--out",
            tmp.path().join("plan.json").to_str().unwrap(),
        ]),
        1,
        "infeasible budget is a usage error"
    );

    // A malformed tensor file is a usage error.
    let bad = tmp.path().join("bad.tdct");
    std::fs::write(&bad, b"TDCT\x01\x02").unwrap();
    assert_eq!(
        exit_code(&[
            "decompose",
            "--kernel",
            bad.to_str().unwrap(),
            "--ranks",
            "1,1",
            "--out",
            tmp.path().join("d2").to_str().unwrap(),
        ]),
        1
    );

    // Numerical failures exit 2: an all-zero kernel has no relative error...
    let zero = tmp.path().join("zero.tdct");
    write_tensor4(&zero, &Tensor4::zeros([4, 4, 3, 3])).unwrap();
    assert_eq!(
        exit_code(&[
            "decompose",
            "--kernel",
            zero.to_str().unwrap(),
            "--ranks",
            "2,2",
            "--out",
            tmp.path().join("d3").to_str().unwrap(),
        ]),
        2
    );

    // ...and a divergent training run is reported as such.
    let cfg = tmp.path().join("diverge.json");
    std::fs::write(
        &cfg,
        r#"{
            "noise": 1.0, "train_samples": 32, "test_samples": 16,
            "warmup_epochs": 0, "ranks": {"conv2": [3, 3]},
            "alpha": 1e9, "rho": 0.3, "epochs": 2, "batch": 8,
            "admm_period": 0, "seed": 7
        }"#,
    )
    .unwrap();
    let out = run(&[
        "admm-train",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        tmp.path().join("tr2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}
