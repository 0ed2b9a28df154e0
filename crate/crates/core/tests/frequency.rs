use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use qdob::analysis::{check_nominal_stability, fit_phasor, to_db, QdobAnalysis};
use qdob::filters::{plan_multistage, rnd};
use qdob::qdob::{compute_omega_c, Qdob, QdobConfig};

fn harmonic(rho: f64) -> QdobConfig {
    QdobConfig {
        mu: 1,
        stages: 3,
        max_order: 256,
        omega_a: 10.0,
        omega_b: 100.0,
        rho,
        period: 2.0 * PI,
        mass: 1.0,
        sample_time: 1e-4,
    }
}

#[test]
fn phi_band_edges() {
    let plan = plan_multistage(1e-4, 2.0 * PI, 10.0, 3, 256).unwrap();
    let at_cutoff = to_db(plan.amplitude(10.0).abs());
    assert!((-8.0..=-2.0).contains(&at_cutoff), "{at_cutoff}");
    assert!(to_db(plan.amplitude(100.0).abs()) < -40.0);
}

#[test]
fn stages_roll_off_in_turn() {
    let plan = plan_multistage(1e-4, 2.0 * PI, 10.0, 3, 256).unwrap();
    let t = plan.sample_time();
    for stage in plan.stages() {
        let wc = stage.cutoff();
        assert!(stage.amplitude(0.5 * wc, t) > 0.99, "stage cutoff {wc}");
        assert!(stage.amplitude(2.0 * wc, t).abs() < 0.01, "stage cutoff {wc}");
    }
    assert_eq!(plan.stages().last().unwrap().cutoff(), 10.0);
}

#[test]
fn omega_c_near_pole() {
    assert!(compute_omega_c(PI - 1e-9, 1.0).unwrap() > 1e6);
}

#[test]
fn q_path_matches_analytic_at_random_frequencies() {
    let cfg = QdobConfig { mu: 0, sample_time: 1e-3, ..QdobConfig::reference() };
    let a = QdobAnalysis::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let t = cfg.sample_time;
    for _ in 0..20 {
        let w = rng.gen_range(0.5..PI / t * 0.95);
        let mut obs = Qdob::new(cfg.clone()).unwrap();
        let settle = rnd(40.0 * cfg.period / t) as usize;
        let periods = (8.0f64).max((2.0 * cfg.period * w / (2.0 * PI)).ceil());
        let len = rnd(periods * 2.0 * PI / (w * t)) as usize;
        let (mut ts, mut xs, mut ds) = (vec![], vec![], vec![]);
        for k in 0..settle + len {
            let x = (w * k as f64 * t).cos();
            let est = obs.step(-x, 0.0).unwrap();
            if k >= settle {
                ts.push(k as f64 * t);
                xs.push(x);
                ds.push(est.disturbance);
            }
        }
        let measured = fit_phasor(&ts, &ds, w).unwrap() / fit_phasor(&ts, &xs, w).unwrap();
        let analytic = a.q(w).unwrap();
        assert!((measured - analytic).norm() / analytic.norm() < 1e-6, "omega {w}");
    }
}

#[test]
fn notches_sit_on_harmonics() {
    let a = QdobAnalysis::new(&harmonic(0.25)).unwrap();
    let step = 1e-3;
    // Harmonics strictly below ω_a; the one at ω_a sits on the filter edge.
    for n in (1..).take_while(|&n| (n as f64) < 10.0) {
        let w0 = n as f64;
        // ±10 %, clipped to half a harmonic spacing so one notch is in view.
        let half = (0.1 * w0).min(0.5);
        let count = rnd(2.0 * half / step) as i64;
        let best = (0..=count)
            .map(|i| (i, a.sensitivity(w0 - half + i as f64 * step).unwrap().norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        let centre = rnd(half / step);
        assert!((best.0 - centre).abs() <= 1, "n = {n}: offset {}", best.0 - centre);
    }
}

#[test]
fn non_amplification_over_suppression_band() {
    let a = QdobAnalysis::new(&harmonic(0.25)).unwrap();
    let peak = (0..20000)
        .map(|i| 0.1 + i as f64 * (10.0 - 0.1) / 19999.0)
        .map(|w| to_db(a.sensitivity(w).unwrap().norm()))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(peak <= 0.5, "{peak}");
}

#[test]
fn stopband_phase_is_filter_lag_only() {
    let cfg = harmonic(0.25);
    let a = QdobAnalysis::new(&cfg).unwrap();
    let w = 2000.0;
    assert!(a.plan().amplitude(w).abs() < 1e-12);
    let expected = (-w).atan2(cfg.omega_b);
    assert!((a.open_loop_phase(w).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn anti_resonance_phase() {
    let a = QdobAnalysis::new(&harmonic(0.25)).unwrap();
    for n in 0..9 {
        let w = n as f64 + 0.5;
        let p = a.open_loop_phase(w).unwrap().to_degrees();
        let amp = a.plan().amplitude(w);
        if amp.abs() <= 1.0 {
            assert!(p > -91.0 && p < 90.0, "omega {w}: {p}");
        } else {
            // Ripple above unity flips the sign of 1 - |Φ|^2; the loop gain
            // there is negligible.
            assert!(a.open_loop(w).unwrap().norm() < 1e-3, "omega {w}");
        }
    }
}

#[test]
fn full_corridor_holds_for_reference_config() {
    let a = QdobAnalysis::new(&QdobConfig::reference()).unwrap();
    let grid = a.default_grid(100).unwrap();
    let report = check_nominal_stability(&a, &grid).unwrap();
    assert!(report.stable, "{report:?}");
    // A refined grid gives the same verdict.
    let fine = check_nominal_stability(&a, &a.default_grid(400).unwrap()).unwrap();
    assert_eq!(fine.stable, report.stable);
}

#[test]
fn robust_branch_one_is_bounded() {
    let a = QdobAnalysis::new(&harmonic(0.25)).unwrap();
    for i in 0..=10000 {
        let w = 10.0 * i as f64 / 10000.0;
        assert!(a.robust_gain(w) <= 1.0 + 1e-12);
    }
}

#[test]
fn realized_and_continuous_agree_at_low_frequency() {
    let a = QdobAnalysis::new(&QdobConfig { sample_time: 1e-3, ..QdobConfig::reference() }).unwrap();
    for w in [0.7, 3.0, 11.0, 23.0] {
        let diff: Complex64 = a.realized_sensitivity(w).unwrap() - a.sensitivity(w).unwrap();
        assert!(diff.norm() < 0.05 * a.sensitivity(w).unwrap().norm().max(1e-3), "omega {w}");
    }
}
