use std::f64::consts::PI;

use proptest::prelude::*;

use qdob::analysis::{lifted_spectrum, QdobAnalysis};
use qdob::baselines::{Dob, HighOrderDobConfig};
use qdob::filters::{plan_multistage, rnd, MultistageFilter};
use qdob::qdob::{Qdob, QdobConfig};

fn feasible_plan() -> impl Strategy<Value = (f64, f64, f64, usize, usize)> {
    (1e-4f64..2e-3, 0.5f64..8.0, 0.05f64..0.6, 1usize..=4, 4usize..=128).prop_map(|(t, l, frac, stages, n)| {
        // ω_a as a fraction of the Nyquist frequency keeps the plan aliasing-free.
        (t, l, frac * PI / t, stages, n)
    })
}

const SEQ_LEN: usize = 300;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn plan_schedule_invariants((t, l, wa, stages, n_max) in feasible_plan()) {
        let Ok(plan) = plan_multistage(t, l, wa, stages, n_max) else { return Ok(()); };
        let s = plan.stages();
        prop_assert_eq!(s.len(), stages);
        prop_assert_eq!(s[0].tap_spacing(), 1);
        prop_assert_eq!(s[0].stage_period(), t);
        prop_assert_eq!(s.last().unwrap().cutoff(), wa);
        for w in s.windows(2) {
            prop_assert!(w[0].cutoff() > w[1].cutoff());
            prop_assert!((w[1].stage_period() - PI / w[0].cutoff()).abs() < 1e-12 * w[1].stage_period());
        }
        let total = rnd(l / t) as usize;
        prop_assert_eq!(plan.total_delay(), total);
        let sum = plan.tap_spacing_sum();
        prop_assert_eq!(plan.order(), ((total - 1) / sum).min(n_max));
        prop_assert!(plan.residual_delay() >= 1);
        prop_assert_eq!(plan.residual_delay(), total - plan.order() * sum);
        prop_assert!((plan.amplitude(0.0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn cascade_passes_constants((t, l, wa, stages, n_max) in feasible_plan(), level in -5.0f64..5.0) {
        let Ok(plan) = plan_multistage(t, l.min(1.0), wa, stages, n_max.min(32)) else { return Ok(()); };
        let delay = plan.total_delay();
        let mut f = MultistageFilter::new(plan).unwrap();
        let mut out = 0.0;
        // The whole footprint, η - 1 + 2NΣŪ, must hold the constant.
        for _ in 0..2 * delay {
            out = f.step(level);
        }
        prop_assert!((out - level).abs() < 1e-9 * (1.0 + level.abs()));
    }

    #[test]
    fn sensitivity_plus_complementary(w_frac in 0.0f64..1.0, rho_frac in 0.05f64..0.9, wb in 20.0f64..400.0) {
        let cfg = QdobConfig {
            rho: rho_frac * PI / (2.0 * PI / 5.0),
            omega_b: wb,
            sample_time: 1e-3,
            ..QdobConfig::reference()
        };
        let a = QdobAnalysis::new(&cfg).unwrap();
        let w = w_frac * a.nyquist();
        let sum = a.sensitivity(w).unwrap() + a.complementary(w).unwrap();
        prop_assert!((sum - 1.0).norm() < 1e-9);
    }

    #[test]
    fn lifted_parseval(values in prop::collection::vec(-10.0f64..10.0, 40..400), per in 5usize..10) {
        let t = 0.01;
        let period = per as f64 * t;
        prop_assume!(values.len() / per >= 4);
        let spectrum = lifted_spectrum(&values, period, t).unwrap();
        prop_assert!(spectrum.parseval_error() < 1e-9);
        let frac = spectrum.energy_above(0.3 * PI / period);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&frac));
    }

    #[test]
    fn qdob_superposes(
        r in prop::collection::vec(-1.0f64..1.0, SEQ_LEN),
        y in prop::collection::vec(-1e-3f64..1e-3, SEQ_LEN),
        gain in -3.0f64..3.0,
        mu in 0u8..=1,
    ) {
        let cfg = QdobConfig { mu, sample_time: 1e-3, period: 0.2, rho: 2.0, omega_a: 50.0, ..QdobConfig::reference() };
        let run = |r: &dyn Fn(usize) -> f64, y: &dyn Fn(usize) -> f64| {
            let mut q = Qdob::new(cfg.clone()).unwrap();
            (0..SEQ_LEN).map(|k| q.step(r(k), y(k)).unwrap()).collect::<Vec<_>>()
        };
        let a = run(&|k| r[k], &|_| 0.0);
        let b = run(&|_| 0.0, &|k| y[k]);
        let c = run(&|k| gain * r[k], &|k| gain * y[k]);
        for k in 0..r.len() {
            let u = gain * (a[k].disturbance + b[k].disturbance);
            prop_assert!((c[k].disturbance - u).abs() <= 1e-9 * (1.0 + u.abs()));
        }
    }

    #[test]
    fn baseline_dc_gain(g in 5.0f64..200.0, m in 1e-3f64..10.0) {
        let dob = Dob::fourth_order(&HighOrderDobConfig { cutoff: g, mass: m, sample_time: 1e-3 }).unwrap();
        prop_assert!((dob.q(0.0) - 1.0).norm() < 1e-12);
        prop_assert!(dob.sensitivity(0.0).norm() < 1e-12);
    }
}
