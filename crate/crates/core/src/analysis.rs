//! Grid-free evaluation of the observer's transfer functions, stability
//! checks, the lifted cycle-domain spectrum and sine-sweep measurement.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Error, Result};
use crate::filters::{rnd, MultistagePlan};
use crate::qdob::{compute_omega_c, QdobConfig};

/// Analytic model of one observer configuration.
#[derive(Debug, Clone)]
pub struct QdobAnalysis {
    config: QdobConfig,
    plan: MultistagePlan,
    omega_c: f64,
}

impl QdobAnalysis {
    pub fn new(config: &QdobConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            plan: config.plan()?,
            omega_c: compute_omega_c(config.rho, config.period)?,
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &QdobConfig {
        &self.config
    }

    pub fn plan(&self) -> &MultistagePlan {
        &self.plan
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    pub fn nyquist(&self) -> f64 {
        PI / self.config.sample_time
    }

    fn check(&self, omega: f64) -> Result<()> {
        // Grids built from pi/T may land a rounding step past it.
        if !(omega >= 0.0 && omega <= self.nyquist() * (1.0 + 1e-12)) {
            return Err(Error::Domain(format!(
                "omega = {omega} rad/s outside [0, pi/T = {}]",
                self.nyquist()
            )));
        }
        Ok(())
    }

    fn cl(&self) -> f64 {
        self.omega_c * self.config.period
    }

    pub fn phi(&self, omega: f64) -> Result<Complex64> {
        self.check(omega)?;
        Ok(self.plan.response(omega))
    }

    pub fn q(&self, omega: f64) -> Result<Complex64> {
        let phi = self.phi(omega)?;
        let cl = self.cl();
        Ok(cl * (1.0 + phi) / ((cl + 2.0) + (cl - 2.0) * phi))
    }

    pub fn b(&self, omega: f64) -> Result<Complex64> {
        self.check(omega)?;
        let wb = self.config.omega_b;
        Ok(wb / Complex64::new(wb, omega))
    }

    /// `Γ(jω)`; an infinite real value marks the poles where `Φ = 1`
    /// (to within rounding of the unit-sum coefficients).
    pub fn open_loop(&self, omega: f64) -> Result<Complex64> {
        let phi = self.phi(omega)?;
        let b = self.b(omega)?;
        let den = 1.0 - phi;
        if den.norm() <= POLE_TOLERANCE {
            return Ok(Complex64::new(f64::INFINITY, 0.0));
        }
        Ok(0.5 * self.cl() * (1.0 + phi) / den * b)
    }

    fn loop_denominator(&self, phi: Complex64, b: Complex64) -> Complex64 {
        let k = self.cl() * b;
        (k + 2.0) + (k - 2.0) * phi
    }

    pub fn sensitivity(&self, omega: f64) -> Result<Complex64> {
        let phi = self.phi(omega)?;
        let b = self.b(omega)?;
        Ok(2.0 * (1.0 - phi) / self.loop_denominator(phi, b))
    }

    pub fn complementary(&self, omega: f64) -> Result<Complex64> {
        let phi = self.phi(omega)?;
        let b = self.b(omega)?;
        Ok(self.cl() * (1.0 + phi) * b / self.loop_denominator(phi, b))
    }

    /// Sensitivity of the sampled loop as realized: zero-order-hold
    /// double-integrator plant, backward-Euler `B` and inverse plant. Differs
    /// from [`Self::sensitivity`] by the 1.5-sample lag of `P_n^{-1} P_zoh`.
    pub fn realized_sensitivity(&self, omega: f64) -> Result<Complex64> {
        let phi = self.phi(omega)?;
        let t = self.config.sample_time;
        let wb = self.config.omega_b;
        let zi = Complex64::from_polar(1.0, -omega * t);
        let b = wb * t / (1.0 + wb * t - zi);
        let k = self.cl() * b * (1.0 + zi) * zi / 2.0;
        Ok(2.0 * (1.0 - phi) / (2.0 * (1.0 - phi) + k * (1.0 + phi)))
    }

    /// `∠Γ(jω)` in radians from the amplitude/phase decomposition, wrapped
    /// to `(-π, π]`.
    pub fn open_loop_phase(&self, omega: f64) -> Result<f64> {
        self.check(omega)?;
        let a = self.plan.amplitude(omega);
        let theta = self.plan.total_delay() as f64 * self.config.sample_time * omega;
        let periodic = (-2.0 * a * theta.sin()).atan2(1.0 - a * a);
        Ok(wrap_phase(periodic + (-omega).atan2(self.config.omega_b)))
    }

    /// `|T̃(jω)|` from the two-branch closed form split at `ω_a`.
    pub fn robust_gain(&self, omega: f64) -> f64 {
        let cl = self.cl();
        let l = self.config.period;
        if omega <= self.config.omega_a {
            // cl / sqrt(cl^2 + 4 tan^2), multiplied through by |cos| to stay
            // finite at the tangent poles.
            let (s, c) = (l * omega / 2.0).sin_cos();
            cl * c.abs() / (cl * cl * c * c + 4.0 * s * s).sqrt()
        } else {
            let wb = self.config.omega_b;
            cl * wb / (4.0 * omega * omega + (2.0 + cl).powi(2) * wb * wb).sqrt()
        }
    }

    /// Harmonic frequencies `nω_0` up to `limit`.
    pub fn harmonics(&self, limit: f64) -> Vec<f64> {
        let w0 = self.config.fundamental();
        (1..).map(|n| n as f64 * w0).take_while(|&w| w <= limit).collect()
    }

    /// Log grid (`per_decade` points per decade from 1e-2 rad/s to `π/T`)
    /// plus `nω_0` and `nω_0 ± ρ` for harmonics up to `2ω_a`.
    pub fn default_grid(&self, per_decade: usize) -> Result<Vec<f64>> {
        let nyquist = self.nyquist();
        let mut grid = log_grid(GRID_START, nyquist, per_decade)?;
        let rho = self.config.rho;
        for w in self.harmonics((HARMONIC_GRID_SPAN * self.config.omega_a).min(nyquist)) {
            grid.extend([w - rho, w, w + rho].into_iter().filter(|&x| x > 0.0 && x <= nyquist));
        }
        Ok(sorted_grid(grid))
    }

    pub fn response(&self, kind: Response, grid: &[f64]) -> Result<FrequencyResponse> {
        let f = |w: f64| -> Result<Complex64> {
            match kind {
                Response::Phi => self.phi(w),
                Response::Q => self.q(w),
                Response::B => self.b(w),
                Response::OpenLoop => self.open_loop(w),
                Response::Sensitivity => self.sensitivity(w),
                Response::Complementary => self.complementary(w),
            }
        };
        let mut fr = FrequencyResponse::evaluate(kind.label(), grid, f)?;
        fr.metadata = serde_json::to_value(&self.config).unwrap_or_default();
        Ok(fr)
    }
}

/// Transfer functions exposed by [`QdobAnalysis::response`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Phi,
    Q,
    B,
    OpenLoop,
    Sensitivity,
    Complementary,
}

impl Response {
    pub const ALL: [Response; 6] = [
        Response::Phi,
        Response::Q,
        Response::B,
        Response::OpenLoop,
        Response::Sensitivity,
        Response::Complementary,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Response::Phi => "phi",
            Response::Q => "q",
            Response::B => "b",
            Response::OpenLoop => "gamma",
            Response::Sensitivity => "s",
            Response::Complementary => "t",
        }
    }
}

/// `|1 - Φ|` at or below which `Γ` is reported as a pole.
pub const POLE_TOLERANCE: f64 = 1e-12;

pub const GRID_START: f64 = 1e-2;
pub const DEFAULT_POINTS_PER_DECADE: usize = 400;
/// Harmonic grid augmentation stops at this multiple of `ω_a`.
pub const HARMONIC_GRID_SPAN: f64 = 2.0;

pub fn log_grid(start: f64, stop: f64, per_decade: usize) -> Result<Vec<f64>> {
    require_positive("grid start", start)?;
    if !(stop.is_finite() && stop > start) {
        return Err(invalid("grid stop", format!("must exceed start {start}, got {stop}")));
    }
    if per_decade == 0 {
        return Err(invalid("grid points", "must be at least 1 per decade"));
    }
    let decades = (stop / start).log10();
    let count = (decades * per_decade as f64).ceil() as usize;
    let mut grid: Vec<f64> = (0..count)
        .map(|i| start * 10f64.powf(i as f64 / per_decade as f64))
        .collect();
    grid.push(stop);
    Ok(grid)
}

fn sorted_grid(mut grid: Vec<f64>) -> Vec<f64> {
    grid.sort_by(f64::total_cmp);
    grid.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs());
    grid
}

pub fn wrap_phase(p: f64) -> f64 {
    let mut w = p.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

pub fn to_db(x: f64) -> f64 {
    20.0 * x.log10()
}

/// Complex samples of one transfer function over an ascending grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyResponse {
    pub label: String,
    pub omega: Vec<f64>,
    pub values: Vec<Complex64>,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

pub const RESPONSE_HEADER: &str = "omega,re,im,mag_db,phase_deg";

impl FrequencyResponse {
    pub fn new(label: impl Into<String>, omega: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if omega.len() != values.len() {
            return Err(invalid("values", "sample count must equal grid length"));
        }
        if omega.is_empty() {
            return Err(invalid("grid", "must not be empty"));
        }
        if omega.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(invalid("grid", "must be strictly ascending"));
        }
        Ok(Self {
            label: label.into(),
            omega,
            values,
            metadata: serde_json::Value::Null,
        })
    }

    /// Evaluates `f` at every grid point in parallel.
    pub fn evaluate(
        label: impl Into<String>,
        grid: &[f64],
        f: impl Fn(f64) -> Result<Complex64> + Sync,
    ) -> Result<Self> {
        let values = grid.par_iter().map(|&w| f(w)).collect::<Result<Vec<_>>>()?;
        Self::new(label, grid.to_vec(), values)
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn magnitude_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| to_db(v.norm())).collect()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{RESPONSE_HEADER}")?;
        let mut buf = ryu::Buffer::new();
        for (w, v) in self.omega.iter().zip(&self.values) {
            let row = [*w, v.re, v.im, to_db(v.norm()), v.arg().to_degrees()];
            for (i, x) in row.iter().enumerate() {
                if i > 0 {
                    out.write_all(b",")?;
                }
                out.write_all(buf.format(*x).as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// JSON with one `{omega, re, im, mag_db, phase_deg}` object per sample;
    /// non-finite numbers become `null`.
    pub fn to_json(&self) -> serde_json::Value {
        let samples: Vec<_> = self
            .omega
            .iter()
            .zip(&self.values)
            .map(|(w, v)| {
                serde_json::json!({
                    "omega": w,
                    "re": v.re,
                    "im": v.im,
                    "mag_db": to_db(v.norm()),
                    "phase_deg": v.arg().to_degrees(),
                })
            })
            .collect();
        serde_json::json!({ "label": self.label, "metadata": self.metadata, "samples": samples })
    }
}

/// Phase corridor summary of `∠Γ` over a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NominalReport {
    pub min_phase_deg: f64,
    pub min_phase_omega: f64,
    pub max_phase_deg: f64,
    pub max_phase_omega: f64,
    /// Largest `|Φ|` seen on the grid; the corridor argument assumes `≤ 1`.
    pub peak_phi_gain: f64,
    /// Grid points with `∠Γ` outside `(-180°, 90°]`.
    pub violations: Vec<f64>,
    /// Largest `|Γ|` among the violations; passband ripple with `|Φ| > 1`
    /// produces violations only where this is far below 1.
    pub violation_peak_gain: f64,
    pub stable: bool,
}

/// Small-gain check `|T̃(jω)| Δ̃(ω) < 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustReport {
    pub max_gain: f64,
    pub max_gain_omega: f64,
    /// Smallest `1 - |T̃|Δ̃` on the grid; negative when the check fails.
    pub worst_margin: f64,
    pub worst_omega: f64,
    pub robust: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub nominal: NominalReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub robust: Option<RobustReport>,
}

/// Tolerance on the upper corridor edge, in radians.
const PHASE_EDGE_TOL: f64 = 1e-12;

pub fn check_nominal_stability(analysis: &QdobAnalysis, grid: &[f64]) -> Result<NominalReport> {
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    let phases = grid
        .par_iter()
        .map(|&w| {
            let gain = analysis.open_loop(w)?.norm();
            Ok((w, analysis.open_loop_phase(w)?, analysis.plan().amplitude(w).abs(), gain))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = NominalReport {
        min_phase_deg: f64::INFINITY,
        min_phase_omega: 0.0,
        max_phase_deg: f64::NEG_INFINITY,
        max_phase_omega: 0.0,
        peak_phi_gain: 0.0,
        violations: Vec::new(),
        violation_peak_gain: 0.0,
        stable: true,
    };
    for (w, p, g, loop_gain) in phases {
        let deg = p.to_degrees();
        if deg < report.min_phase_deg {
            report.min_phase_deg = deg;
            report.min_phase_omega = w;
        }
        if deg > report.max_phase_deg {
            report.max_phase_deg = deg;
            report.max_phase_omega = w;
        }
        report.peak_phi_gain = report.peak_phi_gain.max(g);
        if p <= -PI || p > PI / 2.0 + PHASE_EDGE_TOL {
            report.violations.push(w);
            report.violation_peak_gain = report.violation_peak_gain.max(loop_gain);
        }
    }
    report.stable = report.violations.is_empty();
    Ok(report)
}

pub fn check_robust_stability(
    analysis: &QdobAnalysis,
    grid: &[f64],
    uncertainty: impl Fn(f64) -> f64 + Sync,
) -> Result<RobustReport> {
    if grid.is_empty() {
        return Err(invalid("grid", "must not be empty"));
    }
    let mut report = RobustReport {
        max_gain: 0.0,
        max_gain_omega: 0.0,
        worst_margin: f64::INFINITY,
        worst_omega: 0.0,
        robust: true,
    };
    for &w in grid {
        let bound = uncertainty(w);
        if !(bound.is_finite() && bound > 0.0) {
            return Err(invalid("uncertainty", format!("must be positive at omega = {w}, got {bound}")));
        }
        let g = analysis.robust_gain(w);
        if g > report.max_gain {
            report.max_gain = g;
            report.max_gain_omega = w;
        }
        let margin = 1.0 - g * bound;
        if margin < report.worst_margin {
            report.worst_margin = margin;
            report.worst_omega = w;
        }
    }
    // Equality is the boundary of the small-gain condition.
    report.robust = report.worst_margin >= 0.0;
    Ok(report)
}

/// Cycle-domain DFT of a series reshaped as cycles × intra-cycle samples.
#[derive(Debug, Clone)]
pub struct LiftedSpectrum {
    /// Samples per cycle, `rnd(L/T)`.
    pub cycle_len: usize,
    pub cycles: usize,
    pub period: f64,
    /// Cycle-domain frequencies in rad/s, ascending in `[-π/L, π/L)`.
    pub omega: Vec<f64>,
    /// `values[τ][m]` for intra-cycle index `τ` and frequency `omega[m]`.
    pub values: Vec<Vec<Complex64>>,
    time_energy: f64,
}

pub const MIN_LIFTED_CYCLES: usize = 4;

pub fn lifted_spectrum(samples: &[f64], period: f64, sample_time: f64) -> Result<LiftedSpectrum> {
    require_positive("period", period)?;
    require_positive("sample_time", sample_time)?;
    let cycle_len = rnd(period / sample_time).max(1) as usize;
    let cycles = samples.len() / cycle_len;
    if cycles < MIN_LIFTED_CYCLES {
        return Err(Error::InsufficientData(format!(
            "{} samples hold {cycles} cycles of {cycle_len}; need at least {MIN_LIFTED_CYCLES}",
            samples.len()
        )));
    }
    let fft = FftPlanner::new().plan_fft_forward(cycles);
    let shift = cycles / 2;
    let values: Vec<Vec<Complex64>> = (0..cycle_len)
        .map(|tau| {
            let mut col: Vec<Complex64> = (0..cycles)
                .map(|c| Complex64::new(samples[c * cycle_len + tau], 0.0))
                .collect();
            fft.process(&mut col);
            // Reorder so negative frequencies come first.
            col.rotate_right(shift);
            col
        })
        .collect();
    let omega = (0..cycles)
        .map(|m| 2.0 * PI * (m as f64 - shift as f64) / (cycles as f64 * period))
        .collect();
    let time_energy = samples[..cycles * cycle_len].iter().map(|x| x * x).sum();
    Ok(LiftedSpectrum {
        cycle_len,
        cycles,
        period,
        omega,
        values,
        time_energy,
    })
}

impl LiftedSpectrum {
    fn energy_where(&self, keep: impl Fn(f64) -> bool) -> f64 {
        let mut total = 0.0;
        for row in &self.values {
            for (w, v) in self.omega.iter().zip(row) {
                if keep(*w) {
                    total += v.norm_sqr();
                }
            }
        }
        total / self.cycles as f64
    }

    pub fn total_energy(&self) -> f64 {
        self.energy_where(|_| true)
    }

    /// Fraction of the energy at `|ω| > ρ`; zero for an all-zero series.
    pub fn energy_above(&self, rho: f64) -> f64 {
        let total = self.total_energy();
        if total == 0.0 {
            return 0.0;
        }
        self.energy_where(|w| w.abs() > rho) / total
    }

    /// Relative mismatch between time-domain and spectral energy.
    pub fn parseval_error(&self) -> f64 {
        let spectral = self.total_energy();
        if self.time_energy == 0.0 {
            return spectral;
        }
        (spectral - self.time_energy).abs() / self.time_energy
    }
}

/// Settings for [`measure_gain_sweep`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSettings {
    pub amplitude: f64,
    /// Run length per frequency, s.
    pub duration: f64,
    /// Discarded initial transient, s.
    pub transient: f64,
    pub sample_time: f64,
}

/// Recommended steady-state window length in periods of the swept frequency.
pub const MIN_SWEEP_PERIODS: f64 = 10.0;

/// Drives `system` with `A sin(ωkT)` at each frequency and returns the
/// complex gain of the steady-state response. `system` maps an injection
/// sequence to the response sequence of the same length.
///
/// The steady-state window is trimmed to an integer number of periods, and
/// the fit includes an offset and a linear trend so that slow drift does
/// not leak into the bin.
pub fn measure_gain_sweep(
    system: impl Fn(f64, &[f64]) -> Result<Vec<f64>> + Sync,
    omegas: &[f64],
    settings: &SweepSettings,
) -> Result<FrequencyResponse> {
    let SweepSettings { amplitude, duration, transient, sample_time } = *settings;
    require_positive("amplitude", amplitude)?;
    require_positive("sample_time", sample_time)?;
    require_positive("duration", duration)?;
    if !(transient.is_finite() && (0.0..duration).contains(&transient)) {
        return Err(invalid("transient", "must lie in [0, duration)"));
    }
    let nyquist = PI / sample_time;
    for &w in omegas {
        if !(w > 0.0 && w < nyquist) {
            return Err(invalid("omega", format!("{w} rad/s outside (0, pi/T)")));
        }
    }
    let steps = rnd(duration / sample_time) as usize + 1;
    let cut = rnd(transient / sample_time) as usize;
    let values = omegas
        .par_iter()
        .map(|&w| {
            let window = (steps - cut) as f64 * sample_time;
            let periods = (window * w / (2.0 * PI)).floor();
            if periods < 2.0 {
                return Err(Error::InsufficientData(format!(
                    "only {periods} periods of omega = {w} rad/s after the transient"
                )));
            }
            if periods < MIN_SWEEP_PERIODS {
                log::warn!("sweep at omega = {w} rad/s keeps only {periods} periods");
            }
            let len = rnd(periods * 2.0 * PI / (w * sample_time)).min((steps - cut) as i64) as usize;
            let injection: Vec<f64> = (0..steps)
                .map(|k| amplitude * (w * k as f64 * sample_time).sin())
                .collect();
            let response = system(w, &injection)?;
            if response.len() < cut + len {
                return Err(Error::InsufficientData(format!(
                    "system returned {} samples, expected {steps}",
                    response.len()
                )));
            }
            let times: Vec<f64> = (cut..cut + len).map(|k| k as f64 * sample_time).collect();
            let x = fit_phasor(&times, &injection[cut..cut + len], w)?;
            let y = fit_phasor(&times, &response[cut..cut + len], w)?;
            Ok(y / x)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut order: Vec<usize> = (0..omegas.len()).collect();
    order.sort_by(|&a, &b| omegas[a].total_cmp(&omegas[b]));
    FrequencyResponse::new(
        "sweep",
        order.iter().map(|&i| omegas[i]).collect(),
        order.iter().map(|&i| values[i]).collect(),
    )
}

/// Least-squares fit of `c0 + c1 t + a cos ωt + b sin ωt`; returns `a - jb`.
pub fn fit_phasor(times: &[f64], samples: &[f64], omega: f64) -> Result<Complex64> {
    if times.len() != samples.len() || times.len() < 4 {
        return Err(Error::InsufficientData("phasor fit needs at least 4 samples".into()));
    }
    let mid = (times[0] + times[times.len() - 1]) / 2.0;
    let half = ((times[times.len() - 1] - times[0]) / 2.0).max(f64::MIN_POSITIVE);
    let mut normal = Matrix4::<f64>::zeros();
    let mut rhs = Vector4::<f64>::zeros();
    for (&t, &y) in times.iter().zip(samples) {
        let (s, c) = (omega * t).sin_cos();
        let row = Vector4::new(1.0, (t - mid) / half, c, s);
        normal += row * row.transpose();
        rhs += row * y;
    }
    let sol = normal
        .cholesky()
        .ok_or_else(|| Error::Domain(format!("phasor fit is singular at omega = {omega}")))?
        .solve(&rhs);
    Ok(Complex64::new(sol[2], -sol[3]))
}
