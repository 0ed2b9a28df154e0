//! Common interface of the disturbance observers driven by the simulator.

use crate::error::Result;

/// Output of one observer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    /// Control input `u_k` applied to the plant.
    pub control: f64,
    /// Estimated disturbance `d̂_k`.
    pub disturbance: f64,
}

/// A stateful observer stepped once per control period.
pub trait DisturbanceObserver: Send {
    fn step(&mut self, reference: f64, output: f64) -> Result<Estimate>;
    fn reset(&mut self);
    fn name(&self) -> &'static str;
}

/// Pass-through used for uncontrolled runs: `u_k = r_k`, `d̂_k = 0`.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoObserver;

impl DisturbanceObserver for NoObserver {
    fn step(&mut self, reference: f64, _output: f64) -> Result<Estimate> {
        Ok(Estimate {
            control: reference,
            disturbance: 0.0,
        })
    }

    fn reset(&mut self) {}

    fn name(&self) -> &'static str {
        "none"
    }
}
