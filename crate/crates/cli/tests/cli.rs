use std::path::Path;
use std::process::{Command, Output};

const BASE: &str = r#"
[domain]
d = 1
L = 1.0
M = 32

[model]
m0 = 0.05
kappa = 0.4

[kernel]
family = "smoothed_indicator"
amplitude = 1.0
radius = 0.15
mollifier_width = 0.05

[integrator]
kind = "imex"
h = 1e-3
T = 0.02

[initial]
kind = "single_mode"
k = [1]
eps = 0.2
"#;

fn gcflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcflow")).args(args).output().unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn stderr_json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(out.stderr.trim_ascii()).unwrap()
}

#[test]
fn evolve_streams_records_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out_dir = dir.path().join("out");
    let out = gcflow(&["evolve", "-c", &cfg, "--out-dir", out_dir.to_str().unwrap(), "--snapshot-every", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines: Vec<serde_json::Value> = std::str::from_utf8(&out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 21);
    let gaps: Vec<f64> = lines.iter().map(|r| r["gap"].as_f64().unwrap()).collect();
    assert!(gaps.windows(2).all(|w| w[1] <= w[0]));
    let diag = std::fs::read_to_string(out_dir.join("diag.ndjson")).unwrap();
    assert_eq!(diag.lines().count(), 21);
    for f in ["final.gcf", "config.toml", "snap_00000010.gcf", "snap_00000020.gcf"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }

    let fin = out_dir.join("final.gcf");
    let start = out_dir.join("snap_00000010.gcf");
    let out = gcflow(&["distance", "-c", &cfg, start.to_str().unwrap(), fin.to_str().unwrap(), "--segments", "8"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let d = v["d_a"].as_f64().unwrap();
    assert!(d > 0.0 && d * d <= v["path_upper_sq"].as_f64().unwrap() * 1.01);
}

#[test]
fn dry_run_reports_derived_chemical_potential() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = gcflow(&["evolve", "-c", &cfg, "--dry-run", "--set", "model.kappa=0.3"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["steps"], 20);
    assert_eq!(v["kappa"], 0.3);
    let mu = v["mu"].as_f64().unwrap();
    let info: serde_json::Value = serde_json::from_slice(&gcflow(&["kernel-info", "-c", &cfg]).stdout).unwrap();
    let w = info["kernel"]["w"].as_f64().unwrap();
    assert!((mu - (0.05f64.ln() + w * 0.05)).abs() < 1e-12, "{mu}");
}

#[test]
fn kernel_info_and_check_succeed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), BASE);
    let out = gcflow(&["kernel-info", "-c", &cfg]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["kernel"]["positive_type"], false);
    assert!(v["rate_constants"]["lambda_dagger"].as_f64().unwrap() > 0.5);

    let out = gcflow(&["--jobs", "2", "check", "--seed", "7"]);
    assert!(out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["passed"], true);
}

#[test]
fn config_errors_exit_two_with_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("kappa = 0.4", "kappa = 0.7"));
    let out = gcflow(&["evolve", "-c", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "config");
    assert!(e["message"].as_str().unwrap().contains("kappa"));

    let cfg = write_config(dir.path(), BASE);
    let out = gcflow(&["evolve", "-c", &cfg, "--set", "domain.M=48"]);
    assert_eq!(out.status.code(), Some(2));

    let out = gcflow(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(stderr_json(&out)["error"], "usage");

    let out = gcflow(&["sweep", "-c", &cfg, "--axis", "kappa=0.1,0.2"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unstable_rk4_step_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &BASE.replace("kind = \"imex\"", "kind = \"rk4\"").replace("h = 1e-3", "h = 1e-2").replace("T = 0.02", "T = 2.0"));
    let out = gcflow(&["evolve", "-c", &cfg]);
    assert_eq!(out.status.code(), Some(1));
    let e = stderr_json(&out);
    assert_eq!(e["error"], "numerical");
    assert!(e["message"].as_str().unwrap().contains("stability"));
}

#[test]
fn volume_sweep_reports_each_length() {
    let dir = tempfile::tempdir().unwrap();
    let text = BASE.replace("T = 0.02", "T = 3.0").replace("h = 1e-3", "h = 1e-2").replace("eps = 0.2", "eps = 0.05");
    let cfg = write_config(dir.path(), &text);
    let out = gcflow(&["sweep", "-c", &cfg, "--axis", "L=1,2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let points = v["points"].as_array().unwrap();
    assert_eq!(points.len(), 2);
    for p in points {
        assert!(p["fit"]["lambda_hat"].as_f64().unwrap() > 0.0);
    }
}
