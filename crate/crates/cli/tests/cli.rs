use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_qdob");

const QDOB: &str = r#"
sample_time = 1e-3
seed = 7

[controller]
kind = "qdob"
mu = 1
stages = 3
max_order = 256
omega_a = 50.0
omega_b = 100.0
rho = 2.0
period = 1.2566370614359172

[plant]
mass = 56.13e-4

[outer]
kp = 0.5613
kd = 0.1123
cutoff = 200.0

[disturbance]
kind = "quasiperiodic_drift"
period = 1.2566370614359172
a = [0.0, 0.0, 0.0, 0.01]
b = [0.0, 0.0, 0.0, 0.02]
drift_bandwidth = 1.0
drift_depth = 0.2

[analysis]
points_per_decade = 20
uncertainty = 0.5

[sweep]
omegas = [5.0, 12.0, 27.5]
amplitude = 1.0
duration = 40.0
transient = 15.0

[simulate]
duration = 12.566370614359172
settle = 2.5132741228718345
"#;

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("experiment.toml");
    fs::write(&path, text).unwrap();
    path
}

fn qdob(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().unwrap()
}

fn run_in(dir: &Path, cmd: &str, cfg: &Path, out: &str, extra: &[&str]) -> Output {
    let out = dir.join(out);
    let mut args = vec![cmd, "--quiet", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(extra);
    qdob(&args)
}

#[test]
fn bode_writes_all_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    let out = run_in(tmp.path(), "bode", &cfg, "bode", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for label in ["phi", "q", "gamma", "s", "t"] {
        let csv = fs::read_to_string(tmp.path().join(format!("bode/bode_{label}.csv"))).unwrap();
        assert!(csv.starts_with("omega,re,im,mag_db,phase_deg\n"));
        assert!(csv.lines().count() > 80);
        let json: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(tmp.path().join(format!("bode/bode_{label}.json"))).unwrap())
                .unwrap();
        assert_eq!(json["label"], label);
        assert_eq!(json["samples"].as_array().unwrap().len(), csv.lines().count() - 1);
    }
}

#[test]
fn outputs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    for dir in ["a", "b"] {
        assert!(run_in(tmp.path(), "simulate", &cfg, dir, &[]).status.success());
        assert!(run_in(tmp.path(), "bode", &cfg, dir, &[]).status.success());
    }
    for file in ["trace.csv", "summary.json", "bode_gamma.csv", "bode_s.json"] {
        let a = fs::read(tmp.path().join("a").join(file)).unwrap();
        let b = fs::read(tmp.path().join("b").join(file)).unwrap();
        assert_eq!(a, b, "{file}");
    }
}

#[test]
fn seed_flag_changes_drift() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    assert!(run_in(tmp.path(), "simulate", &cfg, "a", &[]).status.success());
    assert!(run_in(tmp.path(), "simulate", &cfg, "b", &["--seed", "8"]).status.success());
    let a = fs::read(tmp.path().join("a/trace.csv")).unwrap();
    let b = fs::read(tmp.path().join("b/trace.csv")).unwrap();
    assert_ne!(a, b);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("b/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 8);
}

#[test]
fn simulate_reports_attenuation() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    assert!(run_in(tmp.path(), "simulate", &cfg, "sim", &[]).status.success());
    let trace = fs::read_to_string(tmp.path().join("sim/trace.csv")).unwrap();
    assert!(trace.starts_with("t,r,u,d,dhat,y,e\n"));
    assert_eq!(trace.lines().count(), 1 + 12567);
    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("sim/summary.json")).unwrap()).unwrap();
    let h = &summary["harmonics"][0];
    assert_eq!(h["n"], 3);
    assert!(h["attenuation_db"].as_f64().unwrap() < -20.0, "{summary}");
    assert!(
        summary["rms_error_after_settle"].as_f64().unwrap()
            < summary["baseline_rms_error_after_settle"].as_f64().unwrap()
    );
}

#[test]
fn sweep_matches_analytic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    let out = run_in(tmp.path(), "sweep", &cfg, "sw", &[]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "omega,measured_db,measured_phase_deg,analytic_db,analytic_phase_deg,deviation_db"
    );
    let rows: Vec<Vec<f64>> = lines.map(|l| l.split(',').map(|x| x.parse().unwrap()).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert!(r[5].abs() < 0.1, "{r:?}");
    }
}

#[test]
fn stability_writes_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    assert!(run_in(tmp.path(), "stability", &cfg, "st", &[]).status.success());
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("st/stability.json")).unwrap()).unwrap();
    assert_eq!(report["nominal"]["stable"], true);
    assert_eq!(report["robust"]["robust"], true);
}

#[test]
fn tune_check_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let good = write_config(tmp.path(), QDOB);
    assert_eq!(qdob(&["tune-check", "-q", "-c", good.to_str().unwrap()]).status.code(), Some(0));
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, QDOB.replace("rho = 2.0", "rho = 3.0")).unwrap();
    let out = qdob(&["tune-check", "-c", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error["));
}

#[test]
fn validation_and_io_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), QDOB);
    // Empty grid.
    assert_eq!(run_in(tmp.path(), "bode", &cfg, "x", &["--grid-points", "0"]).status.code(), Some(1));
    let none = tmp.path().join("none.toml");
    fs::write(&none, QDOB.replace("kind = \"qdob\"", "kind = \"none\"").replace(
        "mu = 1\nstages = 3\nmax_order = 256\nomega_a = 50.0\nomega_b = 100.0\nrho = 2.0\nperiod = 1.2566370614359172\n",
        "",
    ))
    .unwrap();
    let out = run_in(tmp.path(), "bode", &none, "x", &[]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    let missing = tmp.path().join("missing.toml");
    assert_eq!(qdob(&["bode", "-q", "-c", missing.to_str().unwrap()]).status.code(), Some(3));
}

#[test]
fn numeric_fault_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    // A vanishing true inertia sends the plant state to infinity.
    let text = QDOB.replace("mass = 56.13e-4", "mass = 56.13e-4\ntrue_mass = 1e-300");
    let cfg = write_config(tmp.path(), &text);
    let out = run_in(tmp.path(), "simulate", &cfg, "x", &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn dob_bode_has_q_s_t() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "sample_time = 1e-3\n[controller]\nkind = \"dob4\"\ncutoff = 50.0\n[plant]\nmass = 1.0\n[analysis]\npoints_per_decade = 10\n";
    let cfg = write_config(tmp.path(), text);
    assert!(run_in(tmp.path(), "bode", &cfg, "d", &[]).status.success());
    for label in ["q", "s", "t"] {
        assert!(tmp.path().join(format!("d/bode_{label}.csv")).exists());
    }
    assert!(!tmp.path().join("d/bode_gamma.csv").exists());
}

fn example(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

#[test]
fn hardware_tuning_has_no_errors() {
    let out = qdob(&["tune-check", "-c", example("reference_hardware.toml").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&out.stdout).contains("error["));
}

#[test]
fn tune_check_names_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let pole = tmp.path().join("pole.toml");
    // pi / L for L = 0.4 pi.
    fs::write(&pole, QDOB.replace("rho = 2.0", "rho = 2.5")).unwrap();
    let out = qdob(&["tune-check", "-c", pole.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("error[rho_below_pi_over_l]"));

    let close = tmp.path().join("close.toml");
    fs::write(&close, QDOB.replace("omega_b = 100.0", "omega_b = 50.0")).unwrap();
    let out = qdob(&["tune-check", "-c", close.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("warning[omega_a_much_less_than_omega_b]"));
}

#[test]
fn sweep_without_observer_is_unity() {
    let tmp = tempfile::tempdir().unwrap();
    let text = "sample_time = 1e-3\n[controller]\nkind = \"none\"\n[plant]\nmass = 1.0\n\
                [sweep]\nomegas = [10.0]\namplitude = 1.0\nduration = 10.0\ntransient = 2.0\n";
    let cfg = write_config(tmp.path(), text);
    assert!(run_in(tmp.path(), "sweep", &cfg, "sw", &[]).status.success());
    let csv = fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let row: Vec<f64> = csv.lines().nth(1).unwrap().split(',').map(|x| x.parse().unwrap()).collect();
    assert!(row[1].abs() < 1e-9 && row[5].abs() < 1e-9, "{row:?}");
}

#[test]
fn sweep_too_short_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    // One period of 1 rad/s after the transient.
    let text = QDOB.replace("omegas = [5.0, 12.0, 27.5]", "omegas = [1.0]").replace("duration = 40.0", "duration = 21.0");
    let cfg = write_config(tmp.path(), &text);
    assert_eq!(run_in(tmp.path(), "sweep", &cfg, "sw", &[]).status.code(), Some(1));
}
