//! Experiment configuration file (TOML).

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use qdob::baselines::{Dob, HighOrderDobConfig};
use qdob::observer::{DisturbanceObserver, NoObserver};
use qdob::qdob::{Qdob, QdobConfig, Severity};
use qdob::sim::{Command, DisturbanceProfile, LoopSetup, ModelingError, PdConfig, PlantConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Controller sampling period, s.
    pub sample_time: f64,
    #[serde(default)]
    pub seed: u64,
    pub controller: ControllerConfig,
    pub plant: PlantSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outer: Option<OuterSection>,
    #[serde(default)]
    pub command: Command,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance: Option<DisturbanceProfile>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub output: OutputSection,
}

/// Observer selection. Inertia and sampling time come from `plant.mass` and
/// the top-level `sample_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerConfig {
    Qdob {
        mu: u8,
        stages: usize,
        max_order: usize,
        omega_a: f64,
        omega_b: f64,
        rho: f64,
        period: f64,
    },
    Dob1 {
        cutoff: f64,
    },
    Dob4 {
        cutoff: f64,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    /// Nominal inertia used by the observer and feedforward.
    pub mass: f64,
    /// Inertia of the simulated plant; defaults to `mass`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_mass: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modeling_error: Option<ModelingError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterSection {
    pub kp: f64,
    pub kd: f64,
    pub cutoff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    pub points_per_decade: usize,
    /// Constant uncertainty bound for the small-gain check.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<f64>,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { points_per_decade: qdob::analysis::DEFAULT_POINTS_PER_DECADE, uncertainty: None }
    }
}

/// Sweep frequencies come either from `omegas` or from
/// `10^(log_step * i)` for `i = 0..log_count`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omegas: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_count: Option<usize>,
    pub amplitude: f64,
    pub duration: f64,
    pub transient: f64,
}

impl SweepSection {
    pub fn frequencies(&self) -> Vec<f64> {
        match (&self.omegas, self.log_step, self.log_count) {
            (Some(w), _, _) => w.clone(),
            (None, Some(step), Some(count)) => (0..count).map(|i| 10f64.powf(step * i as f64)).collect(),
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub duration: f64,
    /// Initial span excluded from the settled statistics, s.
    #[serde(default)]
    pub settle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

fn positive(errors: &mut Vec<String>, key: &str, v: f64) {
    if !(v.is_finite() && v > 0.0) {
        errors.push(format!("{key}: must be positive and finite, got {v}"));
    }
}

impl ExperimentConfig {
    /// Parses without checking values.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Validation(vec![e.to_string()]))
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg = Self::parse(text)?;
        let errors = cfg.validate();
        if errors.is_empty() {
            Ok(cfg)
        } else {
            Err(CliError::Validation(errors))
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(list) => {
                CliError::Validation(list.into_iter().map(|m| format!("{}: {m}", path.display())).collect())
            }
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::single(e.to_string()))
    }

    /// Every schema violation, keyed by its dotted path.
    pub fn validate(&self) -> Vec<String> {
        let mut errors = Vec::new();
        positive(&mut errors, "sample_time", self.sample_time);
        // TOML integers are signed 64-bit.
        if self.seed > i64::MAX as u64 {
            errors.push(format!("seed: must be at most {}", i64::MAX));
        }
        positive(&mut errors, "plant.mass", self.plant.mass);
        if let Some(m) = self.plant.true_mass {
            positive(&mut errors, "plant.true_mass", m);
        }
        if let Some(me) = &self.plant.modeling_error {
            positive(&mut errors, "plant.modeling_error.pole", me.pole);
            if !me.gain.is_finite() {
                errors.push("plant.modeling_error.gain: must be finite".into());
            }
            if !(me.delay.is_finite() && me.delay >= 0.0) {
                errors.push("plant.modeling_error.delay: must be non-negative".into());
            }
        }
        match &self.controller {
            ControllerConfig::Qdob { .. } => {
                if let Some(q) = self.qdob_config() {
                    for lint in q.lint() {
                        if lint.severity == Severity::Error {
                            errors.push(format!("controller.{}: {}", lint.rule, lint.message));
                        }
                    }
                }
            }
            ControllerConfig::Dob1 { cutoff } | ControllerConfig::Dob4 { cutoff } => {
                positive(&mut errors, "controller.cutoff", *cutoff)
            }
            ControllerConfig::None => {}
        }
        if let Some(o) = &self.outer {
            for (key, v) in [("outer.kp", o.kp), ("outer.kd", o.kd)] {
                if !(v.is_finite() && v >= 0.0) {
                    errors.push(format!("{key}: must be non-negative, got {v}"));
                }
            }
            positive(&mut errors, "outer.cutoff", o.cutoff);
        }
        if let Some(d) = &self.disturbance {
            if let Err(e) = d.validate() {
                errors.push(format!("disturbance: {e}"));
            }
        }
        if self.analysis.points_per_decade == 0 {
            errors.push("analysis.points_per_decade: grid must not be empty".into());
        }
        if let Some(u) = self.analysis.uncertainty {
            positive(&mut errors, "analysis.uncertainty", u);
        }
        if let Some(s) = &self.sweep {
            positive(&mut errors, "sweep.amplitude", s.amplitude);
            positive(&mut errors, "sweep.duration", s.duration);
            if !(s.transient.is_finite() && s.transient >= 0.0 && s.transient < s.duration) {
                errors.push("sweep.transient: must lie in [0, duration)".into());
            }
            match (&s.omegas, s.log_step, s.log_count) {
                (Some(w), None, None) if w.is_empty() => errors.push("sweep.omegas: must not be empty".into()),
                (Some(_), None, None) => {}
                (None, Some(step), Some(count)) => {
                    if !step.is_finite() || count == 0 {
                        errors.push("sweep.log_step/log_count: need a finite step and count >= 1".into());
                    }
                }
                _ => errors.push("sweep: give either omegas or log_step with log_count".into()),
            }
            let nyquist = PI / self.sample_time;
            for w in s.frequencies() {
                if !(w > 0.0 && w < nyquist) {
                    errors.push(format!("sweep.omegas: {w} rad/s outside (0, pi/T)"));
                }
            }
        }
        if let Some(s) = &self.simulate {
            positive(&mut errors, "simulate.duration", s.duration);
            if !(s.settle.is_finite() && s.settle >= 0.0 && s.settle < s.duration) {
                errors.push("simulate.settle: must lie in [0, duration)".into());
            }
        }
        if self.output.dir.is_empty() {
            errors.push("output.dir: must not be empty".into());
        }
        errors
    }

    pub fn qdob_config(&self) -> Option<QdobConfig> {
        match self.controller {
            ControllerConfig::Qdob { mu, stages, max_order, omega_a, omega_b, rho, period } => Some(QdobConfig {
                mu,
                stages,
                max_order,
                omega_a,
                omega_b,
                rho,
                period,
                mass: self.plant.mass,
                sample_time: self.sample_time,
            }),
            _ => None,
        }
    }

    pub fn observer(&self) -> qdob::Result<Box<dyn DisturbanceObserver>> {
        let (m, t) = (self.plant.mass, self.sample_time);
        Ok(match &self.controller {
            ControllerConfig::Qdob { .. } => Box::new(Qdob::new(self.qdob_config().expect("qdob controller"))?),
            ControllerConfig::Dob1 { cutoff } => Box::new(Dob::first_order(*cutoff, m, t)?),
            ControllerConfig::Dob4 { cutoff } => {
                Box::new(Dob::fourth_order(&HighOrderDobConfig { cutoff: *cutoff, mass: m, sample_time: t })?)
            }
            ControllerConfig::None => Box::new(NoObserver),
        })
    }

    /// Disturbance period, from the controller or the disturbance profile.
    pub fn period(&self) -> Option<f64> {
        match self.controller {
            ControllerConfig::Qdob { period, .. } => Some(period),
            _ => self.disturbance.as_ref().and_then(|d| d.period()),
        }
    }

    pub fn loop_setup(&self) -> LoopSetup {
        LoopSetup {
            sample_time: self.sample_time,
            plant: PlantConfig {
                mass: self.plant.true_mass.unwrap_or(self.plant.mass),
                modeling_error: self.plant.modeling_error.clone(),
            },
            outer: self.outer.as_ref().map(|o| PdConfig {
                kp: o.kp,
                kd: o.kd,
                cutoff: o.cutoff,
                mass: self.plant.mass,
            }),
            command: self.command.clone(),
            period: self.period(),
        }
    }
}
