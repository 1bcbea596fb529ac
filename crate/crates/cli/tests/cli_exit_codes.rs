use std::process::Command;

fn branchpde(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_branchpde")).args(args).output().unwrap()
}

#[test]
fn validation_errors_exit_one() {
    let out = branchpde(&["run", "--problem", "taylor-green", "--nu=-1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nu"));
    let out = branchpde(&["run", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    let out = branchpde(&["sample", "--set", "bogus=3", "--t", "0", "--x", "0,0"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus"));
}

#[test]
fn selftest_passes_and_perturbation_fails() {
    let out = branchpde(&["selftest"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = branchpde(&["selftest", "--perturb-fdb", "1,1:2:1.01"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stdout).contains("(mu=(1,1), n=2, d=2)"));
}

#[test]
fn missed_threshold_exits_three_and_keeps_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = branchpde(&[
        "--workers", "1", "run", "--problem", "taylor-green", "--max-erru", "1e-12",
        "--set", "N=60", "--set", "M=5", "--set", "P=10", "--set", "width=8", "--set", "lr_drops=5,8",
        "--out", dir.path().to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.txt", "manifest.json", "data.csv", "net.ckpt", "errors.json"] {
        assert!(dir.path().join(f).exists(), "{f} missing");
    }
}

#[test]
fn sample_prints_estimate_with_exact_value() {
    let out = branchpde(&[
        "sample", "--problem", "taylor-green", "--t", "0.125", "--x", "0,1.5707963267948966", "--samples", "2000",
    ]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let exact = v["exact"].as_f64().unwrap();
    assert!((exact + 0.7788).abs() < 1e-4);
    assert!(v["mean"].as_f64().unwrap().is_finite());
}
