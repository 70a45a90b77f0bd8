use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::schedule::PhiMode;

pub const DEFAULT_TAU: f64 = 0.1;
/// Thresholds above this are accepted with a warning.
pub const TAU_CEILING: f64 = 0.15;
pub const DEFAULT_PERIOD: usize = 2;
pub const DEFAULT_BIAS_INTERVAL: (f64, f64) = (-0.05, 0.10);

/// Which iterations to approximate and with what weights.
///
/// Iteration `i` is approximated when `a <= i <= b` and `i % period == period - 1`.
/// Iterations are 1-based and counted from the noisy end; `2 <= a` so two prior
/// states exist, and `b <= N - 1` so the final step is always evaluated.
#[derive(Debug, Clone, PartialEq)]
pub struct AccelerationPlan {
    pub interval: Option<(usize, usize)>,
    pub period: usize,
    pub tau: f64,
    /// Calibrated weight per accelerated iteration.
    pub wg: BTreeMap<usize, f64>,
    /// Added to every weight at apply time.
    pub bias: f64,
    pub phi_mode: PhiMode,
}

impl Default for AccelerationPlan {
    fn default() -> Self {
        Self {
            interval: None,
            period: DEFAULT_PERIOD,
            tau: DEFAULT_TAU,
            wg: BTreeMap::new(),
            bias: 0.0,
            phi_mode: PhiMode::SqrtSnr,
        }
    }
}

impl AccelerationPlan {
    pub fn new(interval: Option<(usize, usize)>, period: usize) -> Self {
        Self { interval, period, ..Self::default() }
    }

    /// Plan for the condition "`i % period == period - 1` and `i > threshold`"
    /// on a run of `iterations` steps.
    pub fn after(threshold: usize, iterations: usize, period: usize) -> Self {
        let (a, b) = (threshold + 1, iterations.saturating_sub(1));
        Self::new((a <= b).then_some((a.max(2), b)), period)
    }

    pub fn with_wg(mut self, wg: BTreeMap<usize, f64>) -> Self {
        self.wg = wg;
        self
    }

    pub fn with_bias(mut self, bias: f64) -> Self {
        self.bias = bias;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_phi_mode(mut self, phi_mode: PhiMode) -> Self {
        self.phi_mode = phi_mode;
        self
    }

    pub fn is_accelerated(&self, iteration: usize) -> bool {
        match self.interval {
            Some((a, b)) => (a..=b).contains(&iteration) && iteration % self.period == self.period - 1,
            None => false,
        }
    }

    pub fn accelerated_iterations(&self, iterations: usize) -> Vec<usize> {
        (1..=iterations).filter(|&i| self.is_accelerated(i)).collect()
    }

    /// Weight applied at `iteration`, bias included.
    pub fn weight(&self, iteration: usize) -> Option<f64> {
        self.wg.get(&iteration).map(|w| w + self.bias)
    }

    /// Structural checks for a run of `iterations` steps. Returns warnings for
    /// settings that are allowed but outside the well-tested regime.
    pub fn validate(&self, iterations: usize) -> Result<Vec<String>> {
        let mut warnings = Vec::new();
        if self.period < 2 {
            return Err(Error::Plan(format!("period must be >= 2, got {}", self.period)));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Plan(format!("tau must be positive, got {}", self.tau)));
        }
        if self.tau > TAU_CEILING {
            warnings.push(format!("tau = {} exceeds the recommended ceiling {TAU_CEILING}", self.tau));
        }
        if self.period > 2 {
            warnings
                .push(format!("period {} > 2: single-step error bound does not cover this configuration", self.period));
        }
        if !self.bias.is_finite() {
            return Err(Error::Plan("bias must be finite".into()));
        }
        if let Some((a, b)) = self.interval {
            if a > b {
                return Err(Error::Plan(format!("interval [{a}, {b}] is reversed")));
            }
            if a < 2 {
                return Err(Error::Plan(format!(
                    "interval starts at iteration {a}; an approximated step needs two prior states"
                )));
            }
            if b + 1 > iterations {
                return Err(Error::Plan(format!(
                    "interval ends at iteration {b}; the last approximable iteration of a {iterations}-step run is {}",
                    iterations.saturating_sub(1)
                )));
            }
        }
        Ok(warnings)
    }

    /// [`validate`](Self::validate) plus a weight for every accelerated iteration.
    pub fn validate_calibrated(&self, iterations: usize) -> Result<Vec<String>> {
        let warnings = self.validate(iterations)?;
        if let Some(i) = self.accelerated_iterations(iterations).into_iter().find(|i| !self.wg.contains_key(i)) {
            return Err(Error::Plan(format!("no calibrated weight for iteration {i}")));
        }
        Ok(warnings)
    }
}
