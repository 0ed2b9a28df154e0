//! Filter primitives: Blackman-windowed sinc stages, the multistage
//! linear-phase low-pass cascade, delay lines and the backward-Euler
//! inverse-plant path.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{invalid, require_positive, Error, Result};

/// Rounds half away from zero. Used wherever a duration is converted to a
/// sample count.
pub fn rnd(x: f64) -> i64 {
    x.round() as i64
}

/// Blackman window evaluated at tap `n` of a stage with order `order`.
///
/// The window is not clipped outside `|n| <= order`; callers only iterate
/// over the stage support.
pub fn blackman(n: i64, order: usize) -> f64 {
    let ratio = n as f64 * PI / order as f64;
    0.42 + 0.5 * ratio.cos() + 0.08 * (2.0 * ratio).cos()
}

/// Ideal zero-phase low-pass impulse response sampled with period `stage_period`.
pub fn sinc_tap(n: i64, cutoff: f64, stage_period: f64) -> f64 {
    if n == 0 {
        stage_period * cutoff / PI
    } else {
        let n = n as f64;
        (n * stage_period * cutoff).sin() / (n * PI)
    }
}

/// One symmetric FIR stage of the cascade.
#[derive(Debug, Clone, PartialEq)]
pub struct FirStage {
    order: usize,
    tap_spacing: usize,
    stage_period: f64,
    cutoff: f64,
    /// Normalized taps for `n = -order..=order`, stored at index `n + order`.
    coeffs: Vec<f64>,
    normalizer: f64,
}

impl FirStage {
    /// Designs a stage with cutoff `cutoff` (rad/s) on the stage sampling
    /// period `stage_period` (s). The realized stage reads its input every
    /// `tap_spacing` base samples.
    pub fn design(cutoff: f64, stage_period: f64, order: usize, tap_spacing: usize) -> Result<Self> {
        require_positive("cutoff", cutoff)?;
        require_positive("stage_period", stage_period)?;
        if order == 0 {
            return Err(invalid("order", "must be at least 1"));
        }
        if tap_spacing == 0 {
            return Err(invalid("tap_spacing", "must be at least 1"));
        }
        if stage_period * cutoff >= PI {
            return Err(Error::AliasingConfig(format!(
                "cutoff {cutoff} rad/s is not below the stage Nyquist frequency {} rad/s",
                PI / stage_period
            )));
        }
        let n_max = order as i64;
        let raw: Vec<f64> = (-n_max..=n_max)
            .map(|n| blackman(n, order) * sinc_tap(n, cutoff, stage_period))
            .collect();
        let normalizer: f64 = raw.iter().sum();
        if !(normalizer.is_finite() && normalizer.abs() > f64::EPSILON) {
            return Err(Error::Domain(format!(
                "stage coefficients sum to {normalizer}; cannot normalize"
            )));
        }
        let coeffs = raw.iter().map(|c| c / normalizer).collect();
        Ok(Self {
            order,
            tap_spacing,
            stage_period,
            cutoff,
            coeffs,
            normalizer,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Samples of the base period between consecutive taps.
    pub fn tap_spacing(&self) -> usize {
        self.tap_spacing
    }

    pub fn stage_period(&self) -> f64 {
        self.stage_period
    }

    pub fn cutoff(&self) -> f64 {
        self.cutoff
    }

    /// Sum of the unnormalized windowed taps.
    pub fn normalizer(&self) -> f64 {
        self.normalizer
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Normalized tap `n`, `-order <= n <= order`.
    pub fn coeff(&self, n: i64) -> f64 {
        self.coeffs[(n + self.order as i64) as usize]
    }

    /// Real amplitude of the zero-phase prototype when the stage runs on the
    /// base period `sample_time`. The causal stage adds a pure delay of
    /// `order * tap_spacing` samples.
    pub fn amplitude(&self, omega: f64, sample_time: f64) -> f64 {
        let theta = omega * self.tap_spacing as f64 * sample_time;
        let center = self.coeffs[self.order];
        let tail: f64 = (1..=self.order)
            .map(|m| self.coeffs[self.order + m] * (m as f64 * theta).cos())
            .sum();
        center + 2.0 * tail
    }

    /// Complex response of the causal stage.
    pub fn response(&self, omega: f64, sample_time: f64) -> Complex64 {
        let delay = (self.order * self.tap_spacing) as f64 * sample_time;
        Complex64::from_polar(1.0, -omega * delay) * self.amplitude(omega, sample_time)
    }

    /// Number of past input samples the causal stage reads.
    pub fn span(&self) -> usize {
        2 * self.order * self.tap_spacing + 1
    }
}

/// Free-function form of [`FirStage::design`] for a stage that reads every
/// base sample.
pub fn design_fir_stage(cutoff: f64, stage_period: f64, order: usize) -> Result<FirStage> {
    FirStage::design(cutoff, stage_period, order, 1)
}

/// Dense-grid bound on `|Φ|` above which the planner warns.
pub const GAIN_OVERSHOOT_TOLERANCE: f64 = 1e-3;

/// Stage schedule and delays of the multistage linear-phase low-pass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct MultistagePlan {
    sample_time: f64,
    period: f64,
    stop_cutoff: f64,
    geometric_coeff: f64,
    order: usize,
    stages: Vec<FirStage>,
    residual_delay: usize,
    total_delay: usize,
    warnings: Vec<String>,
}

/// Builds the stage schedule for sampling time `sample_time`, period `period`,
/// final cutoff `stop_cutoff` (`ω_a`), `stage_count` stages and order cap
/// `max_order`.
pub fn plan_multistage(
    sample_time: f64,
    period: f64,
    stop_cutoff: f64,
    stage_count: usize,
    max_order: usize,
) -> Result<MultistagePlan> {
    require_positive("sample_time", sample_time)?;
    require_positive("period", period)?;
    require_positive("omega_a", stop_cutoff)?;
    if stage_count == 0 {
        return Err(invalid("stages", "must be at least 1"));
    }
    if max_order == 0 {
        return Err(invalid("max_order", "must be at least 1"));
    }
    if sample_time * stop_cutoff >= PI {
        return Err(Error::AliasingConfig(format!(
            "omega_a = {stop_cutoff} rad/s is not below the Nyquist frequency {} rad/s",
            PI / sample_time
        )));
    }
    if period <= 2.0 * sample_time {
        return Err(Error::PlanInfeasible(format!(
            "period {period} s must exceed two sampling times ({} s)",
            2.0 * sample_time
        )));
    }

    let geometric_coeff = 0.5 * (sample_time * stop_cutoff / PI).powf(1.0 / stage_count as f64);

    let mut periods = Vec::with_capacity(stage_count);
    let mut cutoffs = Vec::with_capacity(stage_count);
    for i in 0..stage_count {
        let stage_period = if i == 0 { sample_time } else { PI / cutoffs[i - 1] };
        let cutoff = if i + 1 == stage_count {
            stop_cutoff
        } else {
            2.0 * PI * geometric_coeff / stage_period
        };
        periods.push(stage_period);
        cutoffs.push(cutoff);
    }
    let spacings: Vec<usize> = periods
        .iter()
        .map(|u| rnd(u / sample_time).max(1) as usize)
        .collect();
    let spacing_sum: usize = spacings.iter().sum();

    let total_delay = rnd(period / sample_time);
    let feasible = (total_delay - 1).div_euclid(spacing_sum as i64);
    if feasible < 1 {
        return Err(Error::PlanInfeasible(format!(
            "period of {total_delay} samples cannot host a cascade with tap spacings {spacings:?}"
        )));
    }
    let order = (feasible as usize).min(max_order);
    let total_delay = total_delay as usize;
    let residual_delay = total_delay - order * spacing_sum;

    let stages = periods
        .iter()
        .zip(&cutoffs)
        .zip(&spacings)
        .map(|((&u, &w), &s)| FirStage::design(w, u, order, s))
        .collect::<Result<Vec<_>>>()?;

    let mut plan = MultistagePlan {
        sample_time,
        period,
        stop_cutoff,
        geometric_coeff,
        order,
        stages,
        residual_delay,
        total_delay,
        warnings: Vec::new(),
    };
    let peak = plan.peak_gain();
    if peak > 1.0 + GAIN_OVERSHOOT_TOLERANCE {
        let msg = format!(
            "linear-phase low-pass gain peaks at {peak:.6} (> 1 + {GAIN_OVERSHOOT_TOLERANCE}); nominal stability assumes |Φ| <= 1"
        );
        log::warn!("{msg}");
        plan.warnings.push(msg);
    }
    Ok(plan)
}

impl MultistagePlan {
    pub fn sample_time(&self) -> f64 {
        self.sample_time
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn stop_cutoff(&self) -> f64 {
        self.stop_cutoff
    }

    /// The geometric coefficient `c` linking consecutive stage cutoffs.
    pub fn geometric_coeff(&self) -> f64 {
        self.geometric_coeff
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn stages(&self) -> &[FirStage] {
        &self.stages
    }

    /// `η`, the pure delay ahead of the first stage, in samples.
    pub fn residual_delay(&self) -> usize {
        self.residual_delay
    }

    /// `L̄`, the period in samples and the group delay of the cascade.
    pub fn total_delay(&self) -> usize {
        self.total_delay
    }

    pub fn tap_spacing_sum(&self) -> usize {
        self.stages.iter().map(FirStage::tap_spacing).sum()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Signed real amplitude of `Φ`; the phase is a pure delay of `L̄` samples.
    pub fn amplitude(&self, omega: f64) -> f64 {
        self.stages
            .iter()
            .map(|s| s.amplitude(omega, self.sample_time))
            .product()
    }

    /// `Φ(e^{jωT})` of the discrete realization.
    pub fn response(&self, omega: f64) -> Complex64 {
        let delay = self.total_delay as f64 * self.sample_time;
        Complex64::from_polar(1.0, -omega * delay) * self.amplitude(omega)
    }

    /// Largest `|Φ|` over a dense grid up to the Nyquist frequency.
    pub fn peak_gain(&self) -> f64 {
        let nyquist = PI / self.sample_time;
        let edge = (4.0 * self.stop_cutoff).min(nyquist);
        let linear = (0..=2000).map(|i| edge * i as f64 / 2000.0);
        let decades = (nyquist / edge).log10().max(0.0);
        let count = (decades * 100.0).ceil() as usize;
        let log = (1..=count).map(|i| edge * 10f64.powf(decades * i as f64 / count as f64));
        linear
            .chain(log)
            .map(|w| self.amplitude(w.min(nyquist)).abs())
            .fold(0.0, f64::max)
    }
}

/// Fixed-capacity ring buffer. Lag 0 is the most recent write.
///
/// Storage is mirrored so that every readable lag maps to one contiguous
/// index without a modulo.
#[derive(Debug, Clone)]
pub struct DelayLine {
    data: Vec<f64>,
    capacity: usize,
    newest: usize,
}

impl DelayLine {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("capacity", "must be at least 1"));
        }
        Ok(Self {
            data: vec![0.0; 2 * capacity],
            capacity,
            newest: capacity - 1,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, value: f64) {
        self.newest += 1;
        if self.newest == self.capacity {
            self.newest = 0;
        }
        self.data[self.newest] = value;
        self.data[self.newest + self.capacity] = value;
    }

    /// Value written `lag` pushes ago.
    pub fn get(&self, lag: usize) -> Result<f64> {
        if lag >= self.capacity {
            return Err(Error::LagOutOfRange {
                lag,
                capacity: self.capacity,
            });
        }
        Ok(self.at(lag))
    }

    #[inline]
    pub(crate) fn at(&self, lag: usize) -> f64 {
        debug_assert!(lag < self.capacity);
        self.data[self.newest + self.capacity - lag]
    }

    pub fn clear(&mut self) {
        self.data.fill(0.0);
        self.newest = self.capacity - 1;
    }
}

/// Streaming realization of the cascade `𝒫`.
///
/// Each call to [`MultistageFilter::step`] takes the newest input sample and
/// returns the cascade output for the current step. Fed with `λ_{k-1}` at
/// step `k`, the map from `λ` to the output is `Φ`: unit DC gain and a group
/// delay of exactly `L̄` samples.
#[derive(Debug, Clone)]
pub struct MultistageFilter {
    plan: MultistagePlan,
    /// Input history of every stage; index 0 holds the raw input.
    inputs: Vec<DelayLine>,
}

impl MultistageFilter {
    pub fn new(plan: MultistagePlan) -> Result<Self> {
        let first = &plan.stages[0];
        // Stage 1 reads lags residual_delay - 1 ..= residual_delay - 1 + 2 N Ū_1.
        let mut inputs = vec![DelayLine::new(plan.residual_delay + first.span() - 1)?];
        for stage in &plan.stages[1..] {
            inputs.push(DelayLine::new(stage.span())?);
        }
        Ok(Self { plan, inputs })
    }

    pub fn plan(&self) -> &MultistagePlan {
        &self.plan
    }

    pub fn step(&mut self, input: f64) -> f64 {
        self.inputs[0].push(input);
        let stage_count = self.plan.stages.len();
        let mut output = 0.0;
        for (i, stage) in self.plan.stages.iter().enumerate() {
            let offset = if i == 0 { self.plan.residual_delay - 1 } else { 0 };
            output = convolve(stage, &self.inputs[i], offset);
            if i + 1 < stage_count {
                self.inputs[i + 1].push(output);
            }
        }
        output
    }

    pub fn reset(&mut self) {
        self.inputs.iter_mut().for_each(DelayLine::clear);
    }
}

#[inline]
fn convolve(stage: &FirStage, history: &DelayLine, offset: usize) -> f64 {
    let order = stage.order;
    let spacing = stage.tap_spacing;
    let center_lag = offset + order * spacing;
    let coeffs = &stage.coeffs;
    let mut acc = coeffs[order] * history.at(center_lag);
    for m in 1..=order {
        let d = m * spacing;
        acc += coeffs[order + m] * (history.at(center_lag - d) + history.at(center_lag + d));
    }
    acc
}

/// Backward-Euler realization of `B(s) P_n^{-1}(s)` for `P_n = 1/(M s^2)`.
#[derive(Debug, Clone)]
pub struct InversePlant {
    mass: f64,
    cutoff: f64,
    sample_time: f64,
    y1: f64,
    y2: f64,
    xi1: f64,
    steps: u64,
}

impl InversePlant {
    pub fn new(mass: f64, cutoff: f64, sample_time: f64) -> Result<Self> {
        require_positive("mass", mass)?;
        require_positive("omega_b", cutoff)?;
        require_positive("sample_time", sample_time)?;
        Ok(Self {
            mass,
            cutoff,
            sample_time,
            y1: 0.0,
            y2: 0.0,
            xi1: 0.0,
            steps: 0,
        })
    }

    /// Consumes `y_k` and returns `ξ_k`.
    pub fn step(&mut self, y: f64) -> Result<f64> {
        if !y.is_finite() {
            return Err(Error::NumericFault {
                stage: "inverse_plant input",
                step: self.steps,
                value: y,
            });
        }
        let t = self.sample_time;
        let xi = (t * self.xi1 + self.mass * self.cutoff * (y - 2.0 * self.y1 + self.y2))
            / (t * (1.0 + self.cutoff * t));
        if !xi.is_finite() {
            return Err(Error::NumericFault {
                stage: "inverse_plant",
                step: self.steps,
                value: xi,
            });
        }
        self.y2 = self.y1;
        self.y1 = y;
        self.xi1 = xi;
        self.steps += 1;
        Ok(xi)
    }

    pub fn reset(&mut self) {
        self.y1 = 0.0;
        self.y2 = 0.0;
        self.xi1 = 0.0;
        self.steps = 0;
    }
}

/// Free-function form of [`InversePlant::step`].
pub fn inverse_plant_step(state: &mut InversePlant, y: f64) -> Result<f64> {
    state.step(y)
}
