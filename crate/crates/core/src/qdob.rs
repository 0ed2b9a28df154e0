//! The quasiperiodic disturbance observer: configuration, preliminary
//! computations and the real-time step.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Error, Result};
use crate::filters::{plan_multistage, InversePlant, MultistageFilter, MultistagePlan};
use crate::observer::{DisturbanceObserver, Estimate};

/// The nine hyperparameters of the observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdobConfig {
    /// 0 = estimation only, 1 = compensation (`u = r - d̂`).
    pub mu: u8,
    /// Number of cascade stages `l`.
    pub stages: usize,
    /// Order cap `N_max` of each stage.
    pub max_order: usize,
    /// Cutoff of the last cascade stage, rad/s.
    pub omega_a: f64,
    /// Cutoff of the low-pass filter on the inverse plant, rad/s.
    pub omega_b: f64,
    /// Separation frequency, rad/s, in `(0, π/L)`.
    pub rho: f64,
    /// Disturbance period `L`, s.
    pub period: f64,
    /// Nominal inertia `M` of the plant `1/(M s^2)`.
    pub mass: f64,
    /// Controller sampling time `T`, s.
    pub sample_time: f64,
}

/// Severity of a tuning finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

/// One finding of [`QdobConfig::lint`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lint {
    pub severity: Severity,
    /// Stable identifier of the violated rule.
    pub rule: String,
    pub message: String,
}

impl Lint {
    fn error(rule: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Error,
            rule: rule.to_string(),
            message: message.into(),
        }
    }

    fn warning(rule: &str, message: impl Into<String>) -> Self {
        Self {
            severity: Severity::Warning,
            rule: rule.to_string(),
            message: message.into(),
        }
    }
}

/// Ratio below which `ω_b` is not considered well separated from `ω_a`.
pub const MIN_BANDWIDTH_SEPARATION: f64 = 5.0;

impl QdobConfig {
    /// The experimental configuration of the two-motor frequency-response test.
    pub fn reference() -> Self {
        Self {
            mu: 1,
            stages: 3,
            max_order: 256,
            omega_a: 50.0,
            omega_b: 100.0,
            rho: 2.0,
            period: 2.0 * PI / 5.0,
            mass: 56.13e-4,
            sample_time: 2e-4,
        }
    }

    pub fn compensates(&self) -> bool {
        self.mu == 1
    }

    /// Fundamental frequency `ω_0 = 2π/L`.
    pub fn fundamental(&self) -> f64 {
        2.0 * PI / self.period
    }

    /// Checks the hard invariants, returning the first violation.
    pub fn validate(&self) -> Result<()> {
        if self.mu > 1 {
            return Err(invalid("mu", format!("must be 0 or 1, got {}", self.mu)));
        }
        if self.stages == 0 {
            return Err(invalid("stages", "must be at least 1"));
        }
        if self.max_order == 0 {
            return Err(invalid("max_order", "must be at least 1"));
        }
        require_positive("omega_a", self.omega_a)?;
        require_positive("omega_b", self.omega_b)?;
        require_positive("period", self.period)?;
        require_positive("mass", self.mass)?;
        require_positive("sample_time", self.sample_time)?;
        require_positive("rho", self.rho)?;
        if self.rho >= PI / self.period {
            return Err(Error::Domain(format!(
                "rho = {} rad/s must be below pi/L = {} rad/s",
                self.rho,
                PI / self.period
            )));
        }
        Ok(())
    }

    /// Builds the cascade schedule for this configuration.
    pub fn plan(&self) -> Result<MultistagePlan> {
        plan_multistage(
            self.sample_time,
            self.period,
            self.omega_a,
            self.stages,
            self.max_order,
        )
    }

    pub fn omega_c(&self) -> Result<f64> {
        compute_omega_c(self.rho, self.period)
    }

    /// Tuning review: hard errors for invariant violations, warnings for
    /// the separation rules between harmonics, `ω_a` and `ω_b`.
    pub fn lint(&self) -> Vec<Lint> {
        let mut lints = Vec::new();
        if self.mu > 1 {
            lints.push(Lint::error("mu", "mu must be 0 or 1"));
        }
        if self.stages == 0 {
            lints.push(Lint::error("stages", "stages must be at least 1"));
        }
        if self.max_order == 0 {
            lints.push(Lint::error("max_order", "max_order must be at least 1"));
        }
        for (name, value) in [
            ("omega_a", self.omega_a),
            ("omega_b", self.omega_b),
            ("period", self.period),
            ("mass", self.mass),
            ("sample_time", self.sample_time),
        ] {
            if !(value.is_finite() && value > 0.0) {
                lints.push(Lint::error(name, format!("{name} must be positive and finite, got {value}")));
            }
        }
        if !(self.rho.is_finite() && self.rho > 0.0) {
            lints.push(Lint::error("rho", format!("rho must be positive, got {}", self.rho)));
        } else if self.period > 0.0 && self.rho >= PI / self.period {
            lints.push(Lint::error(
                "rho_below_pi_over_l",
                format!(
                    "rho = {} rad/s must be below pi/L = {} rad/s",
                    self.rho,
                    PI / self.period
                ),
            ));
        }
        if lints.iter().any(|l| l.severity == Severity::Error) {
            return lints;
        }

        match self.plan() {
            Ok(plan) => {
                for w in plan.warnings() {
                    lints.push(Lint::warning("phi_gain_above_one", w.clone()));
                }
            }
            Err(e) => lints.push(Lint::error("feasible_order", e.to_string())),
        }
        if self.omega_b < MIN_BANDWIDTH_SEPARATION * self.omega_a {
            lints.push(Lint::warning(
                "omega_a_much_less_than_omega_b",
                format!(
                    "omega_b = {} is less than {MIN_BANDWIDTH_SEPARATION} x omega_a = {}; the open-loop phase leaves the +/-90 deg corridor",
                    self.omega_b, self.omega_a
                ),
            ));
        }
        if self.fundamental() >= self.omega_a {
            lints.push(Lint::warning(
                "harmonics_below_omega_a",
                format!(
                    "fundamental {} rad/s is not below omega_a = {} rad/s; no harmonic is suppressed",
                    self.fundamental(),
                    self.omega_a
                ),
            ));
        }
        lints
    }
}

/// Q-filter cutoff `ω_c = (2/L) tan(Lρ/2)` placing the -3 dB points of the
/// sensitivity at `nω_0 ± ρ`.
pub fn compute_omega_c(rho: f64, period: f64) -> Result<f64> {
    require_positive("period", period)?;
    if !rho.is_finite() || rho < 0.0 {
        return Err(invalid("rho", format!("must be non-negative, got {rho}")));
    }
    if rho >= PI / period {
        return Err(Error::Domain(format!(
            "rho = {rho} rad/s reaches the tangent pole at pi/L = {} rad/s",
            PI / period
        )));
    }
    Ok(2.0 / period * (period * rho / 2.0).tan())
}

/// Real-time state of one observer.
#[derive(Debug, Clone)]
pub struct Qdob {
    config: QdobConfig,
    omega_c: f64,
    /// `ω_c L / ((1-μ) ω_c L + 2)`.
    direct_gain: f64,
    /// `((1-μ) ω_c L - 2) / ((1-μ) ω_c L + 2)`.
    feedback_gain: f64,
    inverse: InversePlant,
    cascade: MultistageFilter,
    last_lambda: f64,
    last_xi: f64,
    steps: u64,
}

impl Qdob {
    pub fn new(config: QdobConfig) -> Result<Self> {
        config.validate()?;
        let plan = config.plan()?;
        let omega_c = config.omega_c()?;
        let wcl = omega_c * config.period;
        let retained = if config.compensates() { 0.0 } else { wcl };
        let denom = retained + 2.0;
        let direct_gain = wcl / denom;
        let feedback_gain = (retained - 2.0) / denom;
        if !(direct_gain.is_finite() && feedback_gain.is_finite()) {
            return Err(Error::Domain(format!("non-finite observer gains for omega_c = {omega_c}")));
        }
        Ok(Self {
            inverse: InversePlant::new(config.mass, config.omega_b, config.sample_time)?,
            cascade: MultistageFilter::new(plan)?,
            config,
            omega_c,
            direct_gain,
            feedback_gain,
            last_lambda: 0.0,
            last_xi: 0.0,
            steps: 0,
        })
    }

    pub fn config(&self) -> &QdobConfig {
        &self.config
    }

    pub fn plan(&self) -> &MultistagePlan {
        self.cascade.plan()
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c
    }

    /// `ξ_k` of the most recent step.
    pub fn last_xi(&self) -> f64 {
        self.last_xi
    }

    /// One control period: consumes `(r_k, y_k)`, returns `(u_k, d̂_k)`.
    pub fn step(&mut self, reference: f64, output: f64) -> Result<Estimate> {
        let k = self.steps;
        let fault = |stage: &'static str, value: f64| Error::NumericFault { stage, step: k, value };
        if !reference.is_finite() {
            return Err(fault("reference input", reference));
        }
        let xi = self.inverse.step(output).map_err(|e| match e {
            Error::NumericFault { stage, value, .. } => fault(stage, value),
            other => other,
        })?;
        let periodic = self.cascade.step(self.last_lambda);
        if !periodic.is_finite() {
            return Err(fault("multistage filter", periodic));
        }
        let innovation = self.direct_gain * (xi - reference);
        let disturbance = innovation + periodic;
        let lambda = innovation - self.feedback_gain * disturbance;
        if !disturbance.is_finite() {
            return Err(fault("disturbance estimate", disturbance));
        }
        if !lambda.is_finite() {
            return Err(fault("periodic-pass state", lambda));
        }
        let control = if self.config.compensates() {
            reference - disturbance
        } else {
            reference
        };
        self.last_lambda = lambda;
        self.last_xi = xi;
        self.steps += 1;
        Ok(Estimate {
            control,
            disturbance,
        })
    }

    /// Zeroes every buffer and history.
    pub fn reset(&mut self) {
        self.inverse.reset();
        self.cascade.reset();
        self.last_lambda = 0.0;
        self.last_xi = 0.0;
        self.steps = 0;
    }
}

impl DisturbanceObserver for Qdob {
    fn step(&mut self, reference: f64, output: f64) -> Result<Estimate> {
        Qdob::step(self, reference, output)
    }

    fn reset(&mut self) {
        Qdob::reset(self)
    }

    fn name(&self) -> &'static str {
        "qdob"
    }
}
