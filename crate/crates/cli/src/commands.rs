//! Subcommand implementations. Every command reads one [`ExperimentConfig`]
//! and writes its artifacts under the output directory.

use std::f64::consts::PI;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::Serialize;

use qdob::analysis::{
    check_nominal_stability, check_robust_stability, fit_phasor, log_grid, measure_gain_sweep, to_db, wrap_phase,
    FrequencyResponse, QdobAnalysis, Response, StabilityReport, SweepSettings, GRID_START,
};
use qdob::baselines::{Dob, HighOrderDobConfig};
use qdob::filters::rnd;
use qdob::observer::NoObserver;
use qdob::qdob::{Lint, Severity};
use qdob::sim::{rms, run_closed_loop, Disturbance, DisturbanceProfile, SimTrace};

use crate::config::{ControllerConfig, ExperimentConfig};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Bode,
    Sweep,
    Simulate,
    Stability,
    TuneCheck,
}

/// Command-line overrides applied on top of the configuration file.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub grid_points: Option<usize>,
    pub quiet: bool,
}

/// Loads `config`, applies `opts` and runs `action`. Returns the files written.
pub fn run(action: Action, config: &Path, opts: &Options) -> Result<Vec<PathBuf>, CliError> {
    if action == Action::TuneCheck {
        return tune_check(config, opts).map(|_| Vec::new());
    }
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(seed) = opts.seed {
        cfg.seed = seed;
    }
    if let Some(points) = opts.grid_points {
        cfg.analysis.points_per_decade = points;
    }
    let errors = cfg.validate();
    if !errors.is_empty() {
        return Err(CliError::Validation(errors));
    }
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("{}: {e}", out.display())))?;
    let written = match action {
        Action::Bode => bode(&cfg, &out)?,
        Action::Sweep => sweep(&cfg, &out)?,
        Action::Simulate => simulate(&cfg, &out)?,
        Action::Stability => stability(&cfg, &out, opts.quiet)?,
        Action::TuneCheck => unreachable!(),
    };
    if !opts.quiet {
        for path in &written {
            println!("wrote {}", path.display());
        }
    }
    Ok(written)
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn dob(cfg: &ExperimentConfig) -> Result<Option<Dob>, CliError> {
    let (m, t) = (cfg.plant.mass, cfg.sample_time);
    Ok(match cfg.controller {
        ControllerConfig::Dob1 { cutoff } => Some(Dob::first_order(cutoff, m, t)?),
        ControllerConfig::Dob4 { cutoff } => {
            Some(Dob::fourth_order(&HighOrderDobConfig { cutoff, mass: m, sample_time: t })?)
        }
        _ => None,
    })
}

fn no_controller(command: &str) -> CliError {
    CliError::single(format!("controller.kind: `none` has no transfer functions to {command}"))
}

fn bode(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let per_decade = cfg.analysis.points_per_decade;
    let responses: Vec<FrequencyResponse> = if let Some(q) = cfg.qdob_config() {
        let a = QdobAnalysis::new(&q)?;
        let grid = a.default_grid(per_decade)?;
        [Response::Phi, Response::Q, Response::OpenLoop, Response::Sensitivity, Response::Complementary]
            .into_iter()
            .map(|kind| a.response(kind, &grid))
            .collect::<qdob::Result<_>>()?
    } else if let Some(d) = dob(cfg)? {
        let grid = log_grid(GRID_START, PI / cfg.sample_time, per_decade)?;
        let meta = serde_json::to_value(&cfg.controller).unwrap_or_default();
        let one = Complex64::new(1.0, 0.0);
        let mut list = vec![
            FrequencyResponse::evaluate("q", &grid, |w| Ok(d.q(w)))?,
            FrequencyResponse::evaluate("s", &grid, |w| Ok(one - d.q(w)))?,
            FrequencyResponse::evaluate("t", &grid, |w| Ok(d.q(w)))?,
        ];
        for fr in &mut list {
            fr.metadata = meta.clone();
        }
        list
    } else {
        return Err(no_controller("plot"));
    };
    let mut written = Vec::new();
    for fr in responses {
        let csv = out.join(format!("bode_{}.csv", fr.label));
        let mut w = create(&csv)?;
        fr.write_csv(&mut w)?;
        w.flush()?;
        let json = out.join(format!("bode_{}.json", fr.label));
        write_json(&json, &fr.to_json())?;
        written.extend([csv, json]);
    }
    Ok(written)
}

/// One row of the sweep table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub omega: f64,
    pub measured_db: f64,
    pub measured_phase_deg: f64,
    pub analytic_db: f64,
    pub analytic_phase_deg: f64,
    pub deviation_db: f64,
}

pub const SWEEP_HEADER: &str = "omega,measured_db,measured_phase_deg,analytic_db,analytic_phase_deg,deviation_db";

/// Injects `A sin ωt` as an input disturbance and measures the plant output
/// ratio with and without the observer. The outer loop is left open so the
/// ratio is the sensitivity alone.
pub fn sweep_rows(cfg: &ExperimentConfig) -> Result<Vec<SweepRow>, CliError> {
    let section = cfg.sweep.as_ref().ok_or_else(|| CliError::single("sweep: section required"))?;
    let analytic: Box<dyn Fn(f64) -> qdob::Result<Complex64>> = if let Some(q) = cfg.qdob_config() {
        let a = QdobAnalysis::new(&q)?;
        // Exact discrete form of the sampled loop.
        Box::new(move |w| a.realized_sensitivity(w))
    } else if let Some(d) = dob(cfg)? {
        Box::new(move |w| Ok(d.sensitivity(w)))
    } else {
        // No observer: both runs coincide.
        Box::new(|_| Ok(Complex64::new(1.0, 0.0)))
    };
    let mut setup = cfg.loop_setup();
    setup.outer = None;
    setup.command = Default::default();
    let settings = SweepSettings {
        amplitude: section.amplitude,
        duration: section.duration,
        transient: section.transient,
        sample_time: cfg.sample_time,
    };
    let omegas = section.frequencies();
    let t = cfg.sample_time;
    let with = measure_gain_sweep(
        |_, x| {
            let mut obs = cfg.observer()?;
            let duration = (x.len() - 1) as f64 * t;
            Ok(run_closed_loop(&setup, obs.as_mut(), |k, _| x[k], duration)?.column(|r| r.y))
        },
        &omegas,
        &settings,
    )?;
    let without = measure_gain_sweep(
        |_, x| {
            let duration = (x.len() - 1) as f64 * t;
            Ok(run_closed_loop(&setup, &mut NoObserver, |k, _| x[k], duration)?.column(|r| r.y))
        },
        &omegas,
        &settings,
    )?;
    with.omega
        .iter()
        .zip(with.values.iter().zip(&without.values))
        .map(|(&w, (a, b))| {
            let measured = a / b;
            let s = analytic(w)?;
            let (mdb, adb) = (to_db(measured.norm()), to_db(s.norm()));
            Ok(SweepRow {
                omega: w,
                measured_db: mdb,
                measured_phase_deg: wrap_phase(measured.arg()).to_degrees(),
                analytic_db: adb,
                analytic_phase_deg: wrap_phase(s.arg()).to_degrees(),
                deviation_db: mdb - adb,
            })
        })
        .collect()
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let rows = sweep_rows(cfg)?;
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    writeln!(w, "{SWEEP_HEADER}")?;
    let mut buf = ryu::Buffer::new();
    for r in &rows {
        let line = [r.omega, r.measured_db, r.measured_phase_deg, r.analytic_db, r.analytic_phase_deg, r.deviation_db]
            .iter()
            .map(|v| buf.format(*v).to_string())
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(vec![path])
}

/// Per-harmonic amplitude of the tracking error with and without the observer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HarmonicAttenuation {
    pub n: usize,
    pub omega: f64,
    pub with_observer: f64,
    pub without_observer: f64,
    pub attenuation_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub observer: String,
    pub seed: u64,
    pub duration: f64,
    pub settle: f64,
    pub rms_error_before_settle: f64,
    pub rms_error_after_settle: f64,
    pub baseline_rms_error_after_settle: f64,
    pub rms_disturbance: f64,
    pub harmonics: Vec<HarmonicAttenuation>,
}

/// Frequencies whose attenuation is reported.
fn tracked_harmonics(profile: &DisturbanceProfile, nyquist: f64) -> Vec<(usize, f64)> {
    match profile {
        DisturbanceProfile::Constant { .. } => Vec::new(),
        DisturbanceProfile::Sinusoid { omega, .. } => vec![(1, *omega)],
        DisturbanceProfile::FourierPeriodic { period, a, b }
        | DisturbanceProfile::QuasiperiodicDrift { period, a, b, .. } => {
            let w0 = 2.0 * PI / period;
            (1..a.len().max(b.len()))
                .filter(|&n| a.get(n).copied().unwrap_or(0.0) != 0.0 || b.get(n).copied().unwrap_or(0.0) != 0.0)
                .map(|n| (n, n as f64 * w0))
                .filter(|&(_, w)| w < nyquist)
                .collect()
        }
    }
}

pub fn simulate_runs(cfg: &ExperimentConfig) -> Result<(SimTrace, SimulationSummary), CliError> {
    let section = cfg.simulate.as_ref().ok_or_else(|| CliError::single("simulate: section required"))?;
    let profile = cfg
        .disturbance
        .as_ref()
        .ok_or_else(|| CliError::single("disturbance: section required"))?;
    let d = Disturbance::new(profile, cfg.seed)?;
    let setup = cfg.loop_setup();
    let mut obs = cfg.observer()?;
    let mut trace = run_closed_loop(&setup, obs.as_mut(), |_, t| d.at(t), section.duration)?;
    let baseline = run_closed_loop(&setup, &mut NoObserver, |_, t| d.at(t), section.duration)?;
    trace.metadata["seed"] = cfg.seed.into();
    trace.metadata["disturbance"] = serde_json::to_value(profile).unwrap_or_default();

    let t = cfg.sample_time;
    let cut = (rnd(section.settle / t) as usize).min(trace.len());
    let mut end = trace.len();
    if let Some(period) = cfg.period() {
        // Whole cycles only, so harmonic fits do not leak.
        let cycle = rnd(period / t) as usize;
        if cycle > 0 && (end - cut) >= cycle {
            end = cut + (end - cut) / cycle * cycle;
        }
    }
    let e = trace.column(|r| r.e);
    let e0 = baseline.column(|r| r.e);
    let times = trace.column(|r| r.t);
    let mut harmonics = Vec::new();
    if end - cut >= 4 {
        for (n, w) in tracked_harmonics(profile, PI / t) {
            let with = fit_phasor(&times[cut..end], &e[cut..end], w)?.norm();
            let without = fit_phasor(&times[cut..end], &e0[cut..end], w)?.norm();
            harmonics.push(HarmonicAttenuation {
                n,
                omega: w,
                with_observer: with,
                without_observer: without,
                attenuation_db: to_db(with / without),
            });
        }
    }
    let summary = SimulationSummary {
        observer: obs.name().to_string(),
        seed: cfg.seed,
        duration: section.duration,
        settle: section.settle,
        rms_error_before_settle: rms(&e[..cut]),
        rms_error_after_settle: rms(&e[cut..]),
        baseline_rms_error_after_settle: rms(&e0[cut..]),
        rms_disturbance: rms(&trace.column(|r| r.d)),
        harmonics,
    };
    Ok((trace, summary))
}

fn simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let (trace, summary) = simulate_runs(cfg)?;
    let csv = out.join("trace.csv");
    let mut w = create(&csv)?;
    trace.write_csv(&mut w)?;
    w.flush()?;
    let json = out.join("summary.json");
    write_json(&json, &summary)?;
    Ok(vec![csv, json])
}

pub fn stability_report(cfg: &ExperimentConfig) -> Result<StabilityReport, CliError> {
    let q = cfg
        .qdob_config()
        .ok_or_else(|| CliError::single("controller.kind: stability check needs a qdob controller"))?;
    let a = QdobAnalysis::new(&q)?;
    let grid = a.default_grid(cfg.analysis.points_per_decade)?;
    let nominal = check_nominal_stability(&a, &grid)?;
    let robust = match cfg.analysis.uncertainty {
        Some(bound) => Some(check_robust_stability(&a, &grid, |_| bound)?),
        None => None,
    };
    Ok(StabilityReport { nominal, robust })
}

fn stability(cfg: &ExperimentConfig, out: &Path, quiet: bool) -> Result<Vec<PathBuf>, CliError> {
    let report = stability_report(cfg)?;
    if !quiet {
        println!(
            "nominal: {} (phase {:.2} to {:.2} deg)",
            if report.nominal.stable { "stable" } else { "corridor violated" },
            report.nominal.min_phase_deg,
            report.nominal.max_phase_deg
        );
        if let Some(r) = &report.robust {
            println!("robust: {} (worst margin {:.4})", if r.robust { "yes" } else { "no" }, r.worst_margin);
        }
    }
    let path = out.join("stability.json");
    write_json(&path, &report)?;
    Ok(vec![path])
}

/// Schema errors plus tuning lints; validation errors appear as error lints.
pub fn tune_findings(cfg: &ExperimentConfig) -> Vec<Lint> {
    let mut lints: Vec<Lint> = cfg
        .validate()
        .into_iter()
        .filter(|m| !m.starts_with("controller."))
        .map(|m| Lint { severity: Severity::Error, rule: "schema".into(), message: m })
        .collect();
    if let Some(q) = cfg.qdob_config() {
        lints.extend(q.lint());
    }
    lints
}

fn tune_check(path: &Path, opts: &Options) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::parse(&text)?;
    let lints = tune_findings(&cfg);
    if !opts.quiet {
        if lints.is_empty() {
            println!("ok");
        }
        for l in &lints {
            let tag = match l.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            println!("{tag}[{}]: {}", l.rule, l.message);
        }
    }
    let errors: Vec<String> = lints
        .iter()
        .filter(|l| l.severity == Severity::Error)
        .map(|l| format!("{}: {}", l.rule, l.message))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(errors))
    }
}
