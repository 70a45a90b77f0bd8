//! Transition-operator extrapolation.
//!
//! A transition operator is the displacement produced by one sampling
//! iteration. Where consecutive operators are nearly parallel, iteration `i`
//! can be replaced by
//!
//! ```text
//! x_i = x_{i-1} + w * gamma * (x_{i-1} - x_{i-2})
//! ```
//!
//! where `gamma` is the ratio of progress increments and `w` is the
//! least-squares weight calibrated on a reference run.

use crate::error::{Error, Result};
use crate::sampler::Trajectory;
use crate::vector::{check_dims, dot, norm, norm_sq, sub};

mod accel;
mod plan;

pub use accel::{
    accelerated_sample, calibrate_wg, maximize_bias, refine_bias, BiasSearch, Calibration, CalibrationRecord,
    SearchMode,
};
pub use plan::{AccelerationPlan, DEFAULT_BIAS_INTERVAL, DEFAULT_PERIOD, DEFAULT_TAU, TAU_CEILING};

/// Displacement `x_lo - x_hi` between two adjacent states.
///
/// `hi` and `lo` count remaining iterations, so `hi = lo + 1` and the state at
/// `hi` is the noisier one.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionOperator {
    pub hi: usize,
    pub lo: usize,
    pub delta: Vec<f64>,
}

impl TransitionOperator {
    pub fn norm(&self) -> f64 {
        norm(&self.delta)
    }

    pub fn is_degenerate(&self) -> bool {
        norm_sq(&self.delta) == 0.0
    }
}

pub fn transition(x_lo: &[f64], x_hi: &[f64], hi: usize) -> Result<TransitionOperator> {
    check_dims(x_hi, x_lo)?;
    let lo = hi.checked_sub(1).ok_or_else(|| Error::Grid("transition needs hi >= 1".into()))?;
    Ok(TransitionOperator { hi, lo, delta: sub(x_lo, x_hi) })
}

/// Angle in radians between two operators, from the clamped cosine
/// `d1.d2 / (|d1| |d2|)`.
pub fn angle(d1: &TransitionOperator, d2: &TransitionOperator) -> Result<f64> {
    check_dims(&d1.delta, &d2.delta)?;
    let (n1, n2) = (norm(&d1.delta), norm(&d2.delta));
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::DegenerateTransition("angle with a zero-norm operator"));
    }
    let cos = (dot(&d1.delta, &d2.delta) / (n1 * n2)).clamp(-1.0, 1.0);
    Ok(cos.acos())
}

/// Angles between consecutive transition operators of one run.
///
/// `angles[k]` belongs to iteration `first_iteration + k` and compares that
/// iteration's operator with the previous one.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleTrace {
    pub first_iteration: usize,
    pub angles: Vec<f64>,
}

impl AngleTrace {
    pub fn from_trajectory(traj: &Trajectory) -> Result<Self> {
        let n = traj.iterations();
        let mut angles = Vec::with_capacity(n.saturating_sub(1));
        for i in 2..=n {
            let prev = transition(traj.state(i - 1), traj.state(i - 2), n - (i - 2))?;
            let cur = transition(traj.state(i), traj.state(i - 1), n - (i - 1))?;
            angles.push(angle(&cur, &prev)?);
        }
        Ok(Self { first_iteration: 2, angles })
    }

    pub fn iterations(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.angles.len()).map(move |k| self.first_iteration + k)
    }

    /// Longest low-angle run, as inclusive iteration numbers.
    pub fn detect(&self, tau: f64) -> Option<(usize, usize)> {
        detect_interval(&self.angles, tau).map(|(a, b)| (a + self.first_iteration, b + self.first_iteration))
    }
}

/// Longest contiguous run of positions with `angle < tau`, as inclusive 0-based
/// positions. Ties go to the earliest run; `None` when no position qualifies.
pub fn detect_interval(angles: &[f64], tau: f64) -> Option<(usize, usize)> {
    let mut best: Option<(usize, usize)> = None;
    let mut run_start = None;
    for (k, &theta) in angles.iter().chain(std::iter::once(&f64::INFINITY)).enumerate() {
        match (theta < tau, run_start) {
            (true, None) => run_start = Some(k),
            (false, Some(s)) => {
                let len = k - s;
                if best.is_none_or(|(a, b)| len > b - a + 1) {
                    best = Some((s, k - 1));
                }
                run_start = None;
            }
            _ => {}
        }
    }
    best
}

/// Least-squares weight minimising `|d_prev - w * gamma * d_prev2|^2`.
///
/// `d_prev` is the operator being approximated and `d_prev2` the one before it.
pub fn wg_closed_form(d_prev: &TransitionOperator, d_prev2: &TransitionOperator, gamma: f64) -> Result<f64> {
    check_dims(&d_prev.delta, &d_prev2.delta)?;
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::DegenerateSchedule(format!("gamma must be positive, got {gamma}")));
    }
    let den = norm_sq(&d_prev2.delta);
    if den == 0.0 {
        return Err(Error::DegenerateTransition("weight against a zero-norm operator"));
    }
    Ok(dot(&d_prev.delta, &d_prev2.delta) / (gamma * den))
}

/// Extrapolated state `x_hi + wg * gamma * d_prev2`; no denoiser call.
pub fn approx_step(x_hi: &[f64], d_prev2: &TransitionOperator, wg: f64, gamma: f64) -> Result<Vec<f64>> {
    check_dims(x_hi, &d_prev2.delta)?;
    let scale = wg * gamma;
    Ok(x_hi.iter().zip(&d_prev2.delta).map(|(x, d)| x + scale * d).collect())
}

/// `|x_true - x_approx|^2 / |d_prev|^2` where `d_prev` is the true operator.
pub fn relative_error(x_true: &[f64], x_approx: &[f64], d_prev: &TransitionOperator) -> Result<f64> {
    check_dims(x_true, x_approx)?;
    check_dims(x_true, &d_prev.delta)?;
    let den = norm_sq(&d_prev.delta);
    if den == 0.0 {
        return Err(Error::ZeroNorm("relative error against a zero-norm transition"));
    }
    Ok(norm_sq(&sub(x_true, x_approx)) / den)
}
