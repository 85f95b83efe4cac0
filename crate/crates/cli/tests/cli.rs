use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_nvregsim"));
    c.env("NVREGSIM_THREADS", "1");
    c
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_slice(&o.stdout).unwrap()
}

/// Setting-2 config with `edit` applied, written to a temp dir.
fn config_with(dir: &Path, edit: impl FnOnce(&mut Value)) -> PathBuf {
    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(shipped("setting2.json")).unwrap()).unwrap();
    edit(&mut c);
    let p = dir.join("cfg.json");
    std::fs::write(&p, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    p
}

#[test]
fn geometry_solve_reports_field() {
    let v = json(&run(&["geometry", "solve", "--nu1", "2571.0", "--nu2", "3160.2", "--d", "2865.42"]));
    assert!((v["results"]["omega_e"].as_f64().unwrap() - 295.18).abs() < 0.01);
    assert!((v["results"]["theta"].as_f64().unwrap() - 3.58).abs() < 0.05);
    assert_eq!(v["command"], "geometry solve");
}

#[test]
fn geometry_forward_inverts_solve() {
    let v = json(&run(&["geometry", "forward", "--omega-e", "295.18", "--theta", "3.58", "--d", "2865.42"]));
    let s = v["results"].to_string();
    assert!(s.contains("2571") && s.contains("3160"), "{s}");
}

#[test]
fn missing_field_exits_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), |c| {
        c["model"].as_object_mut().unwrap().remove("t2_us");
    });
    let o = run(&["simulate", "deer", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("model") && err.contains("t2_us"), "{err}");
}

#[test]
fn unknown_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), |c| c["run"]["sede"] = 3.into());
    assert_eq!(run(&["simulate", "deer", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unfittable_sweep_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), |c| {
        c["run"]["mode"] = "instantaneous".into();
        c["experiment"]["deer"]["tau2_ns"] = serde_json::json!({"start": 0.0, "stop": 20.0, "step": 10.0});
    });
    let o = run(&["simulate", "deer", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn deer_writes_summary_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with(dir.path(), |c| c["run"]["mode"] = "instantaneous".into());
    let out = dir.path().join("out");
    let v = json(&run(&["simulate", "deer", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let on_disk: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(v, on_disk);
    let csv = std::fs::read_to_string(out.join("deer.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("# "));
    assert_eq!(lines.next().unwrap(), "tau2_ns,sigma_x,sigma_y");
    assert_eq!(lines.count(), 36);
    let nu = v["results"]["sigma_x"]["nu_dip"].as_f64().unwrap();
    assert!((nu - 0.11289).abs() / 0.11289 < 0.05, "{nu}");
}

#[test]
fn depolarizing_rb_is_deterministic_across_workers() {
    let cfg = shipped("setting2.json");
    let args = ["bench", "rb", "--config", cfg.to_str().unwrap(), "--seed", "3", "--depolarizing", "0.05"];
    let a = bin().args(args).env("NVREGSIM_THREADS", "1").output().unwrap();
    let b = bin().args(args).env("NVREGSIM_THREADS", "2").output().unwrap();
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let c = bin().args(["bench", "rb", "--config", cfg.to_str().unwrap(), "--seed", "4", "--depolarizing", "0.05"]).output().unwrap();
    assert_ne!(a.stdout, c.stdout);
}

#[test]
fn charge_fit_recovers_weights() {
    let dir = tempfile::tempdir().unwrap();
    let (w, lam) = ([0.09, 0.42, 0.49], [1.5, 9.0, 24.0]);
    let mut body = String::from("# synthetic\nn_photons,count\n");
    for n in 0..70u32 {
        let pmf: f64 = (0..3)
            .map(|k| {
                let ln = n as f64 * f64::ln(lam[k]) - lam[k] - (1..=n).map(|i| (i as f64).ln()).sum::<f64>();
                w[k] * ln.exp()
            })
            .sum();
        body.push_str(&format!("{n},{}\n", (1e6 * pmf).round()));
    }
    let input = dir.path().join("h.csv");
    std::fs::write(&input, body).unwrap();
    let out = dir.path().join("fit");
    let v = json(&run(&["charge", "fit", "--input", input.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    let got: Vec<f64> = find_weights(&v["results"]).expect("weights in results");
    for k in 0..3 {
        assert!((got[k] - w[k]).abs() < 0.02, "{got:?}");
    }
    assert!(std::fs::read_to_string(out.join("charge_fit.csv")).unwrap().lines().nth(1).unwrap() == "n_photons,count,model");
}

fn find_weights(v: &Value) -> Option<Vec<f64>> {
    match v {
        Value::Object(m) => {
            if let Some(Value::Array(a)) = m.get("weights") {
                return a.iter().map(|x| x.as_f64()).collect();
            }
            m.values().find_map(find_weights)
        }
        _ => None,
    }
}

#[test]
fn photophysics_table_has_described_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("ph");
    json(&run(&["photophysics", "rates", "--rate-column", "gupta", "--b-max", "20", "--out", out.to_str().unwrap()]));
    let csv = std::fs::read_to_string(out.join("photophysics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("# columns:"));
    assert_eq!(lines[1], "b_gauss,contrast,contrast_ref,ratio,f_init");
    assert_eq!(lines.len(), 2 + 5);
    assert!(lines[2].starts_with("0,") && lines[2].contains(",1,"));
}

#[test]
fn bad_flag_value_is_a_usage_error() {
    let o = run(&["photophysics", "rates", "--rate-column", "nope"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn density_scan_writes_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("conv");
    let cfg = shipped("setting2.json");
    let v = json(&run(&["scan", "density", "--config", cfg.to_str().unwrap(), "--densities", "1,2", "--reference", "4", "--out", out.to_str().unwrap()]));
    assert_eq!(v["results"]["points"].as_array().unwrap().len(), 2);
    assert_eq!(v["results"]["orders"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(out.join("convergence.csv")).unwrap();
    assert_eq!(csv.lines().nth(1).unwrap(), "step_density,max_abs_error,infidelity,order");
    assert!(csv.lines().nth(2).unwrap().ends_with(",nan"));
}

#[test]
fn reduced_density_runs_record_a_convergence_check() {
    let cfg = shipped("setting2.json");
    let low = json(&run(&["bench", "repetitive", "--config", cfg.to_str().unwrap(), "--engine", "reduced", "--step-density", "2"]));
    let chk = &low["results"]["convergence_check"];
    assert_eq!(chk["reference_density"], 20.0);
    assert!(chk["infidelity"].as_f64().unwrap() < 1e-3);
    let full = json(&run(&["bench", "repetitive", "--config", cfg.to_str().unwrap(), "--engine", "reduced"]));
    assert!(full["results"]["convergence_check"].is_null());
}
