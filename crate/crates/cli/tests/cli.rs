//! The `fcme` binary end to end: exit codes, run directories and tables.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fcme_cli::output::{read_metrics, RunManifest, Status};

const SMALL: &str = r#"
name = "small"
seed = 3

[problem]
kind = "policy_eval"
lambda = 0.1

[policy_eval]
n_states = 6

[dynamics]
alpha = 4.0
width = 16
steps = 64
checkpoint_every = 16

[metrics]
names = ["potential_v", "w2_primal"]
"#;

fn fcme(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fcme")).arg("--out").arg(out).args(args).output().expect("binary runs")
}

fn write_cfg(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn stdout_path(o: &Output) -> PathBuf {
    PathBuf::from(String::from_utf8_lossy(&o.stdout).trim())
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn zero_steps_records_only_the_initial_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", &SMALL.replace("steps = 64", "steps = 0"));
    let o = fcme(&tmp.path().join("runs"), &["run", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = stdout_path(&o);
    let records = read_metrics(&dir.join("metrics.csv")).unwrap();
    assert!(records.iter().all(|r| r.iteration == 0 && r.t == 0.0));
    assert_eq!(records.len(), 2);
    assert_eq!(RunManifest::read(&dir).unwrap().status, Status::Ok);
}

#[test]
fn invalid_config_exits_with_code_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", &SMALL.replace("alpha = 4.0", "alpha = -1.0"));
    let o = fcme(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
    let typo = write_cfg(tmp.path(), "b.cfg", &SMALL.replace("width = 16", "widht = 16"));
    assert_eq!(fcme(tmp.path(), &["run", typo.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn run_writes_manifest_metrics_and_networks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", SMALL);
    let o = fcme(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert!(o.status.success());
    let dir = stdout_path(&o);
    for f in ["manifest.json", "metrics.csv", "final_primal.json", "final_dual.json"] {
        assert!(dir.join(f).exists(), "{f}");
    }
    let m = RunManifest::read(&dir).unwrap();
    assert_eq!(m.config.dynamics.steps, Some(64));
    assert_eq!(m.config.dynamics.eps, Some(1.0 / 16.0));
    assert_eq!(m.config.dynamics.eta, Some(1.0 / 16.0));
    let ts: Vec<f64> = read_metrics(&dir.join("metrics.csv")).unwrap().iter().filter(|r| r.name == "potential_v").map(|r| r.t).collect();
    assert_eq!(ts, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
}

#[test]
fn identical_configs_reproduce_bit_identical_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", SMALL);
    let a = stdout_path(&fcme(tmp.path(), &["run", cfg.to_str().unwrap()]));
    let b = stdout_path(&fcme(tmp.path(), &["run", cfg.to_str().unwrap()]));
    assert_ne!(a, b);
    // Everything but the run_id column, which names the directory.
    let body = |d: &Path| -> Vec<String> {
        std::fs::read_to_string(d.join("metrics.csv")).unwrap().lines().map(|l| l.split_once(',').unwrap().1.to_string()).collect()
    };
    assert_eq!(body(&a), body(&b));
}

#[test]
fn sweep_over_alpha_writes_children_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", SMALL);
    let o = fcme(tmp.path(), &["sweep", cfg.to_str().unwrap(), "--param", "dynamics.alpha", "--values", "1,2,4,8"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = stdout_path(&o);
    let children = std::fs::read_dir(&dir).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(children, 4);
    let mut r = csv::Reader::from_path(dir.join("summary.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 4);
    let seeds: Vec<&str> = rows.iter().map(|x| &x[3]).collect();
    assert_eq!(seeds, ["3", "4", "5", "6"]);
}

#[test]
fn common_seed_sweep_shares_the_initialization() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", SMALL);
    let o = fcme(tmp.path(), &["sweep", cfg.to_str().unwrap(), "--param", "dynamics.alpha", "--values", "8,16", "--common-seed"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(stdout_path(&o).join("summary.csv")).unwrap();
    let col = r.headers().unwrap().iter().position(|h| h == "max_w2_primal").unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!((&rows[0][3], &rows[1][3]), ("3", "3"));
    let (a, b): (f64, f64) = (rows[0][col].parse().unwrap(), rows[1][col].parse().unwrap());
    assert!(b < a, "{a} {b}");
}

#[test]
fn sweeping_width_halves_the_stepsize() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", SMALL);
    let o = fcme(tmp.path(), &["sweep", cfg.to_str().unwrap(), "--param", "dynamics.width", "--values", "16,32"]);
    assert!(o.status.success());
    let mut r = csv::Reader::from_path(stdout_path(&o).join("summary.csv")).unwrap();
    let eps: Vec<f64> = r.records().map(|x| x.unwrap()[4].parse().unwrap()).collect();
    assert_eq!(eps, vec![1.0 / 16.0, 1.0 / 32.0]);
}

#[test]
fn empty_sweep_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", SMALL);
    let o = fcme(tmp.path(), &["sweep", cfg.to_str().unwrap(), "--param", "dynamics.alpha", "--values", ""]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn compare_without_reference_width_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_cfg(tmp.path(), "a.cfg", &format!("{SMALL}\n[compare]\nwidths = [8]\nhorizon = 1.0\n"));
    assert_eq!(fcme(tmp.path(), &["compare-dynamics", cfg.to_str().unwrap()]).status.code(), Some(2));
    let none = write_cfg(tmp.path(), "b.cfg", SMALL);
    assert_eq!(fcme(tmp.path(), &["compare-dynamics", none.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn compare_writes_width_tables_and_loglog() {
    let tmp = tempfile::tempdir().unwrap();
    let text = format!(
        "{}\n[compare]\nwidths = [8, 32]\nn_ref = 32\nhorizon = 0.5\nref_step = 0.03125\nn_checkpoints = 4\n",
        SMALL.replace("steps = 64", "horizon = 0.5").replace("[metrics]", "expectation = \"exact\"\nantithetic = true\n\n[metrics]")
    );
    let cfg = write_cfg(tmp.path(), "a.cfg", &text);
    let o = fcme(tmp.path(), &["compare-dynamics", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = stdout_path(&o);
    assert!(dir.join("width_8.csv").exists() && dir.join("width_32.csv").exists());
    let mut r = csv::Reader::from_path(dir.join("loglog.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let err8: f64 = rows[0][2].parse().unwrap();
    let err32: f64 = rows[1][2].parse().unwrap();
    assert!(err8.is_finite() && err8 > 0.0);
    // The width-32 leg shares its initialization with the reference.
    assert!(err32 < err8, "{err8} {err32}");
}

#[test]
fn divergence_exits_with_code_three() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace("alpha = 4.0", "alpha = 1.0").replace("width = 16", "width = 16\neta = 1e8");
    let cfg = write_cfg(tmp.path(), "a.cfg", &text);
    let o = fcme(tmp.path(), &["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    let dir = std::fs::read_dir(tmp.path()).unwrap().map(|e| e.unwrap().path()).find(|p| p.is_dir()).unwrap();
    assert_eq!(RunManifest::read(&dir).unwrap().status, Status::Diverged);
}

#[test]
fn ccapm_desk_pins_the_anchor() {
    let tmp = tempfile::tempdir().unwrap();
    let o = fcme(tmp.path(), &["run", configs().join("ccapm-desk.cfg").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let records = read_metrics(&stdout_path(&o).join("metrics.csv")).unwrap();
    let anchor = records.iter().filter(|r| r.name == "anchor_value").last().unwrap().value;
    assert!((anchor - 1.0).abs() < 0.1, "f(1) = {anchor}");
}

#[test]
fn verify_passes_and_catches_an_injected_fault() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = fcme(tmp.path(), &["verify"]);
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stdout));
    assert!(!String::from_utf8_lossy(&ok.stdout).contains("FAIL"));
    let bad = fcme(tmp.path(), &["verify", "--inject-fault", "flip-dual-sign"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stdout).contains("FAIL"));
}
