use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const UVM_CALL: &str = r#"
[generator]
kind = "uvm"
sig_lo = 1.0
sig_hi = 2.0

[payoff]
kind = "call"
k = 0.0

[control]
A0 = [1.0, 4.0]

[lattice]
n_space = 400
n_time = 100

[verify]
n_paths = 500
n_steps = 200
tol = 0.02

[qv]
n_steps = 20000

[run]
seed = 3
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg = dir.join("run.toml");
    fs::write(&cfg, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_dualtarget"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn summary(out: &Output) -> Vec<(String, String)> {
    String::from_utf8_lossy(&out.stdout)
        .split_whitespace()
        .filter_map(|kv| kv.split_once('=').map(|(k, v)| (k.to_string(), v.to_string())))
        .collect()
}

fn value(out: &Output, key: &str) -> f64 {
    summary(out)
        .into_iter()
        .find(|(k, _)| k == key)
        .unwrap_or_else(|| panic!("no {key} in {}", String::from_utf8_lossy(&out.stdout)))
        .1
        .parse()
        .unwrap()
}

#[test]
fn dual_reports_value_and_writes_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), UVM_CALL, &["dual"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v0 = value(&out, "v0");
    assert!((v0 - 0.797_884_560_8).abs() < 7e-3);
    let o = dir.path().join("out");
    for f in ["value_surface.csv", "k_process.csv", "manifest.txt", "config.toml"] {
        assert!(o.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(o.join("config.toml")).unwrap(), UVM_CALL);
    let manifest = fs::read_to_string(o.join("manifest.txt")).unwrap();
    assert!(manifest.contains("config_sha256=") && manifest.contains("seed=3"));
    let surface = fs::read_to_string(o.join("value_surface.csv")).unwrap();
    assert!(surface.starts_with("t,x,V,argmax_a\n"));
}

#[test]
fn oracle_agrees_with_dp_on_the_tree() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        UVM_CALL,
        &["oracle", "--depth", "3", "--a0", "1,4", "--assert"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!((value(&out, "v0") - value(&out, "v0_dp")).abs() <= 1e-12);
}

#[test]
fn dual_and_pde_share_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let d = run(dir.path(), UVM_CALL, &["dual"]);
    let p = run(dir.path(), UVM_CALL, &["pde", "--assert"]);
    assert!(p.status.success());
    assert!((value(&d, "v0") - value(&p, "u0")).abs() <= 1e-8);
    assert!(dir.path().join("out/pde_surface.csv").exists());
}

#[test]
fn empty_control_set_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &UVM_CALL.replace("[1.0, 4.0]", "[]"), &["dual"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("control.A0"));
}

#[test]
fn unknown_key_reports_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        dir.path(),
        &UVM_CALL.replace("n_time = 100", "n_time = 100\nspeed = 2"),
        &["dual"],
    );
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("speed"), "{err}");
}

#[test]
fn failed_assertion_exits_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = UVM_CALL.replace("tol = 0.02", "tol = 0.02\nmargin = -0.2");
    let out = run(dir.path(), &cfg, &["verify", "--assert"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let without = run(dir.path(), &cfg, &["verify"]);
    assert_eq!(without.status.code(), Some(0));
}

#[test]
fn identical_runs_give_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for args in [&["verify"][..], &["qv"][..], &["dual"][..]] {
        run(a.path(), UVM_CALL, args);
        run(b.path(), UVM_CALL, args);
    }
    for f in ["superhedge_report.csv", "qv.csv", "value_surface.csv", "manifest.txt"] {
        let x = fs::read(a.path().join("out").join(f)).unwrap();
        let y = fs::read(b.path().join("out").join(f)).unwrap();
        assert_eq!(x, y, "{f} differs");
    }
}

#[test]
fn seed_flag_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), UVM_CALL, &["qv", "--seed", "11"]);
    assert!(out.status.success());
    let manifest = fs::read_to_string(dir.path().join("out/manifest.txt")).unwrap();
    assert!(manifest.contains("seed=11"));
}

#[test]
fn output_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, UVM_CALL).unwrap();
    let target = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_dualtarget"))
        .args(["oracle", "--config"])
        .arg(&cfg)
        .env("DUALTARGET_OUT", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(target.join("manifest.txt").exists());
}
