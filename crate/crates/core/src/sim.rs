//! Fixed-step closed-loop simulation of a double-integrator plant with
//! disturbance generators and an optional outer PD + feedforward loop.

use std::f64::consts::PI;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Error, Result};
use crate::filters::rnd;
use crate::observer::DisturbanceObserver;

/// Multiplicative modeling error `Δ(s) = gain · pole/(s + pole) · e^{-delay s}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelingError {
    pub gain: f64,
    /// rad/s
    pub pole: f64,
    /// s
    #[serde(default)]
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    /// True inertia of the simulated plant.
    pub mass: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modeling_error: Option<ModelingError>,
}

#[derive(Debug, Clone)]
struct ModelingErrorState {
    decay: f64,
    gain: f64,
    state: f64,
    /// Delayed plant inputs, newest last.
    pipeline: std::collections::VecDeque<f64>,
}

/// `1/(M s^2)` integrated exactly under a zero-order hold of `u + d`.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    mass: f64,
    sample_time: f64,
    position: f64,
    velocity: f64,
    error: Option<ModelingErrorState>,
}

impl DoubleIntegrator {
    pub fn new(config: &PlantConfig, sample_time: f64) -> Result<Self> {
        require_positive("plant.mass", config.mass)?;
        require_positive("sample_time", sample_time)?;
        let error = match &config.modeling_error {
            None => None,
            Some(me) => {
                if !me.gain.is_finite() {
                    return Err(invalid("modeling_error.gain", "must be finite"));
                }
                require_positive("modeling_error.pole", me.pole)?;
                if !(me.delay.is_finite() && me.delay >= 0.0) {
                    return Err(invalid("modeling_error.delay", "must be non-negative"));
                }
                let lag = rnd(me.delay / sample_time) as usize;
                Some(ModelingErrorState {
                    decay: (-me.pole * sample_time).exp(),
                    gain: me.gain,
                    state: 0.0,
                    pipeline: std::iter::repeat(0.0).take(lag).collect(),
                })
            }
        };
        Ok(Self {
            mass: config.mass,
            sample_time,
            position: 0.0,
            velocity: 0.0,
            error,
        })
    }

    pub fn position(&self) -> f64 {
        self.position
    }

    pub fn velocity(&self) -> f64 {
        self.velocity
    }

    /// Holds `force` over one sampling period.
    pub fn advance(&mut self, force: f64) {
        let effective = match &mut self.error {
            None => force,
            Some(me) => {
                me.pipeline.push_back(force);
                let delayed = me.pipeline.pop_front().unwrap_or(force);
                let extra = me.state;
                me.state = me.decay * me.state + (1.0 - me.decay) * me.gain * delayed;
                force + extra
            }
        };
        let t = self.sample_time;
        let accel = effective / self.mass;
        self.position += self.velocity * t + 0.5 * accel * t * t;
        self.velocity += accel * t;
    }
}

/// Disturbance shapes. Fourier coefficients follow
/// `d(t) = a_0/2 + Σ a_n cos(nω_0 t) + b_n sin(nω_0 t)`, `b[0]` unused and zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisturbanceProfile {
    Constant {
        value: f64,
    },
    Sinusoid {
        amplitude: f64,
        omega: f64,
        #[serde(default)]
        phase: f64,
    },
    FourierPeriodic {
        period: f64,
        a: Vec<f64>,
        b: Vec<f64>,
    },
    /// Fourier series whose harmonics carry slowly varying amplitude
    /// envelopes, band-limited below `drift_bandwidth` rad/s.
    QuasiperiodicDrift {
        period: f64,
        a: Vec<f64>,
        b: Vec<f64>,
        drift_bandwidth: f64,
        /// Peak relative envelope excursion, in `[0, 1)`.
        drift_depth: f64,
        #[serde(default = "default_drift_components")]
        drift_components: usize,
    },
}

fn default_drift_components() -> usize {
    8
}

impl DisturbanceProfile {
    pub fn validate(&self) -> Result<()> {
        let finite = |name: &'static str, v: &[f64]| -> Result<()> {
            match v.iter().find(|x| !x.is_finite()) {
                Some(x) => Err(invalid(name, format!("non-finite coefficient {x}"))),
                None => Ok(()),
            }
        };
        match self {
            Self::Constant { value } => finite("disturbance.value", &[*value]),
            Self::Sinusoid { amplitude, omega, phase } => {
                finite("disturbance.amplitude", &[*amplitude, *phase])?;
                if !(omega.is_finite() && *omega >= 0.0) {
                    return Err(invalid("disturbance.omega", "must be non-negative"));
                }
                Ok(())
            }
            Self::FourierPeriodic { period, a, b } => validate_series(*period, a, b),
            Self::QuasiperiodicDrift {
                period,
                a,
                b,
                drift_bandwidth,
                drift_depth,
                drift_components,
            } => {
                validate_series(*period, a, b)?;
                require_positive("disturbance.drift_bandwidth", *drift_bandwidth)?;
                if *drift_bandwidth >= PI / period {
                    return Err(invalid(
                        "disturbance.drift_bandwidth",
                        format!("must be below pi/L = {}", PI / period),
                    ));
                }
                if !(drift_depth.is_finite() && (0.0..1.0).contains(drift_depth)) {
                    return Err(invalid("disturbance.drift_depth", "must lie in [0, 1)"));
                }
                if *drift_components == 0 {
                    return Err(invalid("disturbance.drift_components", "must be at least 1"));
                }
                Ok(())
            }
        }
    }

    /// Fundamental period, if the profile has one.
    pub fn period(&self) -> Option<f64> {
        match self {
            Self::FourierPeriodic { period, .. } | Self::QuasiperiodicDrift { period, .. } => Some(*period),
            _ => None,
        }
    }
}

fn validate_series(period: f64, a: &[f64], b: &[f64]) -> Result<()> {
    require_positive("disturbance.period", period)?;
    if let Some(x) = a.iter().chain(b).find(|x| !x.is_finite()) {
        return Err(invalid("disturbance.a", format!("non-finite coefficient {x}")));
    }
    if b.first().is_some_and(|&b0| b0 != 0.0) {
        return Err(invalid("disturbance.b", "b[0] multiplies sin(0) and must be 0"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
struct Harmonic {
    omega: f64,
    cos: f64,
    sin: f64,
    /// (weight, frequency, phase) of the envelope terms.
    envelope: Vec<(f64, f64, f64)>,
}

/// Deterministic disturbance generator built from a profile and a seed.
#[derive(Debug, Clone)]
pub struct Disturbance {
    offset: f64,
    harmonics: Vec<Harmonic>,
}

impl Disturbance {
    pub fn new(profile: &DisturbanceProfile, seed: u64) -> Result<Self> {
        profile.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let series = |period: f64, a: &[f64], b: &[f64]| -> (f64, Vec<Harmonic>) {
            let w0 = 2.0 * PI / period;
            let n = a.len().max(b.len());
            let offset = a.first().copied().unwrap_or(0.0) / 2.0;
            let harmonics = (1..n)
                .map(|i| Harmonic {
                    omega: i as f64 * w0,
                    cos: a.get(i).copied().unwrap_or(0.0),
                    sin: b.get(i).copied().unwrap_or(0.0),
                    envelope: Vec::new(),
                })
                .filter(|h| h.cos != 0.0 || h.sin != 0.0)
                .collect();
            (offset, harmonics)
        };
        Ok(match profile {
            DisturbanceProfile::Constant { value } => Self { offset: *value, harmonics: vec![] },
            DisturbanceProfile::Sinusoid { amplitude, omega, phase } => Self {
                offset: 0.0,
                harmonics: vec![Harmonic {
                    omega: *omega,
                    cos: amplitude * phase.sin(),
                    sin: amplitude * phase.cos(),
                    envelope: vec![],
                }],
            },
            DisturbanceProfile::FourierPeriodic { period, a, b } => {
                let (offset, harmonics) = series(*period, a, b);
                Self { offset, harmonics }
            }
            DisturbanceProfile::QuasiperiodicDrift {
                period,
                a,
                b,
                drift_bandwidth,
                drift_depth,
                drift_components,
            } => {
                let (offset, mut harmonics) = series(*period, a, b);
                let weight = drift_depth / *drift_components as f64;
                for h in &mut harmonics {
                    h.envelope = (0..*drift_components)
                        .map(|_| {
                            let nu = rng.gen::<f64>() * drift_bandwidth;
                            let phase = rng.gen::<f64>() * 2.0 * PI;
                            (weight, nu, phase)
                        })
                        .collect();
                }
                Self { offset, harmonics }
            }
        })
    }

    pub fn at(&self, t: f64) -> f64 {
        self.offset
            + self
                .harmonics
                .iter()
                .map(|h| {
                    let envelope = 1.0
                        + h.envelope
                            .iter()
                            .map(|&(w, nu, ph)| w * (nu * t + ph).cos())
                            .sum::<f64>();
                    let arg = h.omega * t;
                    envelope * (h.cos * arg.cos() + h.sin * arg.sin())
                })
                .sum::<f64>()
    }
}

/// Evaluates a disturbance profile at time `t`.
pub fn gen_disturbance(profile: &DisturbanceProfile, t: f64, seed: u64) -> Result<f64> {
    Ok(Disturbance::new(profile, seed)?.at(t))
}

/// Position command `θ^cmd(t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    #[default]
    Zero,
    Step {
        amplitude: f64,
        #[serde(default)]
        at: f64,
    },
    Sinusoid {
        amplitude: f64,
        omega: f64,
    },
}

impl Command {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Command::Zero => 0.0,
            Command::Step { amplitude, at } => {
                if t >= at {
                    amplitude
                } else {
                    0.0
                }
            }
            Command::Sinusoid { amplitude, omega } => amplitude * (omega * t).sin(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdConfig {
    pub kp: f64,
    pub kd: f64,
    /// Pseudo-differentiation and command-filter cutoff `G`, rad/s.
    pub cutoff: f64,
    /// Feedforward inertia.
    pub mass: f64,
}

/// `r = K_p e + K_d ê̇ + M θ̈̂^cmd` with backward-Euler pseudo-differentiators.
#[derive(Debug, Clone)]
pub struct OuterPd {
    config: PdConfig,
    sample_time: f64,
    error_filtered: f64,
    cmd_position: f64,
    cmd_velocity: f64,
}

impl OuterPd {
    pub fn new(config: PdConfig, sample_time: f64) -> Result<Self> {
        for (name, v) in [("outer.kp", config.kp), ("outer.kd", config.kd), ("outer.mass", config.mass)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, format!("must be non-negative, got {v}")));
            }
        }
        require_positive("outer.cutoff", config.cutoff)?;
        require_positive("sample_time", sample_time)?;
        Ok(Self {
            config,
            sample_time,
            error_filtered: 0.0,
            cmd_position: 0.0,
            cmd_velocity: 0.0,
        })
    }

    pub fn step(&mut self, command: f64, output: f64) -> f64 {
        let PdConfig { kp, kd, cutoff: g, mass } = self.config;
        let t = self.sample_time;
        let error = command - output;
        self.error_filtered = (self.error_filtered + t * g * error) / (1.0 + t * g);
        let error_rate = g * (error - self.error_filtered);

        self.cmd_velocity = (self.cmd_velocity + t * g * g * (command - self.cmd_position))
            / (1.0 + 2.0 * g * t + g * g * t * t);
        self.cmd_position += t * self.cmd_velocity;
        let cmd_accel = g * g * (command - self.cmd_position) - 2.0 * g * self.cmd_velocity;

        kp * error + kd * error_rate + mass * cmd_accel
    }

    pub fn reset(&mut self) {
        self.error_filtered = 0.0;
        self.cmd_position = 0.0;
        self.cmd_velocity = 0.0;
    }
}

pub fn outer_pd_step(ctrl: &mut OuterPd, command: f64, output: f64) -> f64 {
    ctrl.step(command, output)
}

/// One sample of a closed-loop run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub r: f64,
    pub u: f64,
    pub d: f64,
    pub dhat: f64,
    pub y: f64,
    pub e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimTrace {
    pub sample_time: f64,
    pub records: Vec<TraceRecord>,
    pub metadata: serde_json::Value,
}

pub const TRACE_HEADER: &str = "t,r,u,d,dhat,y,e";

impl SimTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn column(&self, pick: impl Fn(&TraceRecord) -> f64) -> Vec<f64> {
        self.records.iter().map(pick).collect()
    }

    /// Writes the trace as CSV with shortest round-trip decimal formatting.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        let mut buf = ryu::Buffer::new();
        for r in &self.records {
            let fields = [r.t, r.r, r.u, r.d, r.dhat, r.y, r.e];
            for (i, v) in fields.iter().enumerate() {
                if i > 0 {
                    out.write_all(b",")?;
                }
                out.write_all(buf.format(*v).as_bytes())?;
            }
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Fixed parameters of a closed-loop run.
#[derive(Debug, Clone)]
pub struct LoopSetup {
    pub sample_time: f64,
    pub plant: PlantConfig,
    pub outer: Option<PdConfig>,
    pub command: Command,
    /// Disturbance period, when known; used for the duration check.
    pub period: Option<f64>,
}

/// Recommended minimum run length in periods.
pub const MIN_PERIODS: f64 = 10.0;

/// Runs the loop for `duration` seconds. Step `k` at `t = kT`: the outer
/// controller maps `(θ^cmd, y_k)` to `r_k`, the observer maps `(r_k, y_k)` to
/// `u_k`, then the plant integrates `u_k + d_k` over one period.
pub fn run_closed_loop(
    setup: &LoopSetup,
    observer: &mut dyn DisturbanceObserver,
    disturbance: impl Fn(usize, f64) -> f64,
    duration: f64,
) -> Result<SimTrace> {
    require_positive("sample_time", setup.sample_time)?;
    if !(duration.is_finite() && duration >= 0.0) {
        return Err(invalid("duration", "must be non-negative"));
    }
    let t_s = setup.sample_time;
    if let Some(period) = setup.period {
        if duration < MIN_PERIODS * period {
            log::warn!("duration {duration} s is shorter than {MIN_PERIODS} periods of {period} s");
        }
    }
    let mut plant = DoubleIntegrator::new(&setup.plant, t_s)?;
    let mut outer = setup.outer.clone().map(|c| OuterPd::new(c, t_s)).transpose()?;
    let steps = rnd(duration / t_s) as usize;
    let mut records = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        let t = k as f64 * t_s;
        let y = plant.position();
        if !y.is_finite() {
            return Err(Error::NumericFault { stage: "plant output", step: k as u64, value: y });
        }
        let cmd = setup.command.at(t);
        let r = match outer.as_mut() {
            Some(pd) => pd.step(cmd, y),
            None => 0.0,
        };
        let est = observer.step(r, y)?;
        let d = disturbance(k, t);
        if !d.is_finite() {
            return Err(Error::NumericFault { stage: "disturbance", step: k as u64, value: d });
        }
        plant.advance(est.control + d);
        records.push(TraceRecord {
            t,
            r,
            u: est.control,
            d,
            dhat: est.disturbance,
            y,
            e: cmd - y,
        });
    }
    Ok(SimTrace {
        sample_time: t_s,
        records,
        metadata: serde_json::json!({
            "observer": observer.name(),
            "sample_time": t_s,
            "duration": duration,
            "plant": setup.plant,
            "outer": setup.outer,
            "command": setup.command,
        }),
    })
}

/// Root mean square of a slice; zero for an empty slice.
pub fn rms(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}
