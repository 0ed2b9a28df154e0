//! Reference disturbance observers: first-order and fourth-order
//! binomial Q-filters on the plant `1/(M s^2)`, discretized by backward Euler.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, require_positive, Error, Result};
use crate::observer::{DisturbanceObserver, Estimate};

/// Discrete transfer function in `z^{-1}` with `den[0] = 1`.
#[derive(Debug, Clone)]
pub struct DiscreteTf {
    num: Vec<f64>,
    den: Vec<f64>,
    inputs: Vec<f64>,
    outputs: Vec<f64>,
}

impl DiscreteTf {
    /// Backward-Euler image (`s <- (1 - z^{-1})/T`) of `num(s)/den(s)`.
    /// Polynomials are given in ascending powers of `s`.
    pub fn backward_euler(num: &[f64], den: &[f64], sample_time: f64) -> Result<Self> {
        require_positive("sample_time", sample_time)?;
        if num.is_empty() || den.is_empty() {
            return Err(invalid("polynomial", "must have at least one coefficient"));
        }
        let degree = num.len().max(den.len()) - 1;
        let map = |poly: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; degree + 1];
            for (i, &p) in poly.iter().enumerate() {
                let scale = p * sample_time.powi((degree - i) as i32);
                // (1 - q)^i
                let mut binom = 1.0;
                for j in 0..=i {
                    let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                    out[j] += scale * sign * binom;
                    binom = binom * (i - j) as f64 / (j + 1) as f64;
                }
            }
            out
        };
        let mut n = map(num);
        let mut d = map(den);
        let lead = d[0];
        if !(lead.is_finite() && lead.abs() > 0.0) {
            return Err(Error::Domain("backward-Euler image is not causal".into()));
        }
        n.iter_mut().for_each(|c| *c /= lead);
        d.iter_mut().for_each(|c| *c /= lead);
        let len = degree + 1;
        Ok(Self {
            num: n,
            den: d,
            inputs: vec![0.0; len],
            outputs: vec![0.0; len],
        })
    }

    pub fn numerator(&self) -> &[f64] {
        &self.num
    }

    pub fn denominator(&self) -> &[f64] {
        &self.den
    }

    /// Direct feedthrough `num[0]`.
    pub fn direct(&self) -> f64 {
        self.num[0]
    }

    /// Contribution of past samples to the current output.
    pub fn free_response(&self) -> f64 {
        let mut acc = 0.0;
        for i in 1..self.num.len() {
            acc += self.num[i] * self.inputs[i - 1] - self.den[i] * self.outputs[i - 1];
        }
        acc
    }

    /// Shifts the histories after the current `(input, output)` pair is known.
    pub fn commit(&mut self, input: f64, output: f64) {
        self.inputs.rotate_right(1);
        self.outputs.rotate_right(1);
        self.inputs[0] = input;
        self.outputs[0] = output;
    }

    pub fn step(&mut self, input: f64) -> f64 {
        let y = self.direct() * input + self.free_response();
        self.commit(input, y);
        y
    }

    pub fn reset(&mut self) {
        self.inputs.fill(0.0);
        self.outputs.fill(0.0);
    }

    /// Frequency response at `z = e^{jωT}`.
    pub fn response(&self, omega: f64, sample_time: f64) -> Complex64 {
        let eval = |p: &[f64]| -> Complex64 {
            p.iter()
                .enumerate()
                .map(|(i, &c)| Complex64::from_polar(c, -omega * sample_time * i as f64))
                .sum()
        };
        eval(&self.num) / eval(&self.den)
    }
}

/// Parameters of the fourth-order binomial disturbance observer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HighOrderDobConfig {
    /// Q-filter cutoff `g`, rad/s.
    pub cutoff: f64,
    pub mass: f64,
    pub sample_time: f64,
}

impl HighOrderDobConfig {
    pub const ORDER: usize = 4;

    /// `c_i = 4!/((4-i)! i!) g^{4-i}` for `i = 0, 1, 2`.
    pub fn coefficients(&self) -> [f64; 3] {
        let g = self.cutoff;
        [binomial(4, 0) * g.powi(4), binomial(4, 1) * g.powi(3), binomial(4, 2) * g * g]
    }

    /// Q-filter numerator and denominator in ascending powers of `s`.
    fn q_polynomials(&self) -> (Vec<f64>, Vec<f64>) {
        let g = self.cutoff;
        let den = (0..=4).map(|i| binomial(4, i) * g.powi(4 - i as i32)).collect();
        (self.coefficients().to_vec(), den)
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Disturbance observer `d̂ = Q (P_n^{-1} y - u)`, `u = r - d̂`, with both
/// paths discretized by backward Euler and the algebraic loop through the
/// direct feedthrough solved exactly.
#[derive(Debug, Clone)]
pub struct Dob {
    name: &'static str,
    q_num: Vec<f64>,
    q_den: Vec<f64>,
    sample_time: f64,
    from_output: DiscreteTf,
    from_control: DiscreteTf,
    steps: u64,
}

impl Dob {
    fn build(name: &'static str, q_num: Vec<f64>, q_den: Vec<f64>, mass: f64, sample_time: f64) -> Result<Self> {
        require_positive("mass", mass)?;
        // Q(s) M s^2
        let mut y_num = vec![0.0, 0.0];
        y_num.extend(q_num.iter().map(|c| c * mass));
        let from_output = DiscreteTf::backward_euler(&y_num, &q_den, sample_time)?;
        let from_control = DiscreteTf::backward_euler(&q_num, &q_den, sample_time)?;
        if (1.0 - from_control.direct()).abs() < f64::EPSILON {
            return Err(Error::Domain("algebraic loop through the Q-filter is singular".into()));
        }
        Ok(Self {
            name,
            q_num,
            q_den,
            sample_time,
            from_output,
            from_control,
            steps: 0,
        })
    }

    /// Classical observer with `Q(s) = g/(s + g)`.
    pub fn first_order(cutoff: f64, mass: f64, sample_time: f64) -> Result<Self> {
        require_positive("cutoff", cutoff)?;
        Self::build("dob1", vec![cutoff], vec![cutoff, 1.0], mass, sample_time)
    }

    /// Fourth-order observer with `Q(s) = (c_2 s^2 + c_1 s + c_0)/(s + g)^4`.
    pub fn fourth_order(config: &HighOrderDobConfig) -> Result<Self> {
        require_positive("cutoff", config.cutoff)?;
        let (num, den) = config.q_polynomials();
        Self::build("dob4", num, den, config.mass, config.sample_time)
    }

    /// Continuous-time `Q(jω)`.
    pub fn q(&self, omega: f64) -> Complex64 {
        let s = Complex64::new(0.0, omega);
        polyval(&self.q_num, s) / polyval(&self.q_den, s)
    }

    /// Continuous-time sensitivity `1 - Q(jω)`.
    pub fn sensitivity(&self, omega: f64) -> Complex64 {
        Complex64::new(1.0, 0.0) - self.q(omega)
    }

    /// Discrete `Q(e^{jωT})` of the control path.
    pub fn discrete_q(&self, omega: f64) -> Complex64 {
        self.from_control.response(omega, self.sample_time)
    }

    pub fn step(&mut self, reference: f64, output: f64) -> Result<Estimate> {
        let k = self.steps;
        if !output.is_finite() {
            return Err(Error::NumericFault { stage: "observer output input", step: k, value: output });
        }
        if !reference.is_finite() {
            return Err(Error::NumericFault { stage: "reference input", step: k, value: reference });
        }
        let observed = self.from_output.direct() * output + self.from_output.free_response();
        let h0 = self.from_control.direct();
        let control_free = self.from_control.free_response();
        let disturbance = (observed - h0 * reference - control_free) / (1.0 - h0);
        if !disturbance.is_finite() {
            return Err(Error::NumericFault { stage: "disturbance estimate", step: k, value: disturbance });
        }
        let control = reference - disturbance;
        self.from_output.commit(output, observed);
        self.from_control.commit(control, h0 * control + control_free);
        self.steps += 1;
        Ok(Estimate { control, disturbance })
    }

    pub fn reset(&mut self) {
        self.from_output.reset();
        self.from_control.reset();
        self.steps = 0;
    }
}

fn polyval(coeffs: &[f64], s: Complex64) -> Complex64 {
    coeffs.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &c| acc * s + c)
}

impl DisturbanceObserver for Dob {
    fn step(&mut self, reference: f64, output: f64) -> Result<Estimate> {
        Dob::step(self, reference, output)
    }

    fn reset(&mut self) {
        Dob::reset(self)
    }

    fn name(&self) -> &'static str {
        self.name
    }
}

pub fn fourth_order_dob_step(state: &mut Dob, reference: f64, output: f64) -> Result<Estimate> {
    state.step(reference, output)
}

pub fn first_order_dob_step(state: &mut Dob, reference: f64, output: f64) -> Result<Estimate> {
    state.step(reference, output)
}
