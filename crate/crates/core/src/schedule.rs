//! Discrete variance-preserving noise schedules.
//!
//! A [`NoiseSchedule`] is a precomputed table of cumulative signal fractions
//! `alpha_bar[t]` for `t = 0..=T`, with `alpha_bar[0] = 1` at the clean-data end.
//! Denoising progress is measured by `phi(t)`, by default `sqrt(SNR_t)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Map from a timestep to denoising progress. All variants are strictly
/// decreasing in `t`, so progress grows as sampling moves toward `t = 0`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiMode {
    /// `sqrt(alpha_bar / (1 - alpha_bar))`.
    #[default]
    SqrtSnr,
    /// `alpha_bar / (1 - alpha_bar)`.
    Snr,
    /// `T + 1 - t`, affine in the timestep.
    Linear,
    /// Explicit table indexed by timestep, length `T + 1`.
    Table(Vec<f64>),
}

impl std::fmt::Display for PhiMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            PhiMode::SqrtSnr => f.write_str("sqrt_snr"),
            PhiMode::Snr => f.write_str("snr"),
            PhiMode::Linear => f.write_str("linear"),
            PhiMode::Table(_) => f.write_str("table"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
    beta_start: f64,
    beta_end: f64,
}

impl NoiseSchedule {
    /// Linear-beta schedule: `beta_s` interpolates linearly from `beta_start`
    /// (s = 1) to `beta_end` (s = T) and `alpha_bar[t] = prod_{s<=t} (1 - beta_s)`.
    pub fn linear_beta(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 3 {
            return Err(Error::InvalidSchedule(format!("need at least 3 steps, got {steps}")));
        }
        if !(beta_start.is_finite() && beta_end.is_finite()) {
            return Err(Error::InvalidSchedule("beta bounds must be finite".into()));
        }
        if beta_start <= 0.0 {
            return Err(Error::InvalidSchedule(format!("beta_start {beta_start} must be positive")));
        }
        if beta_start > beta_end {
            return Err(Error::InvalidSchedule(format!("beta_start {beta_start} exceeds beta_end {beta_end}")));
        }
        if beta_end >= 1.0 {
            return Err(Error::InvalidSchedule(format!("beta_end {beta_end} must be below 1")));
        }

        let span = (steps - 1) as f64;
        let mut alpha_bar = Vec::with_capacity(steps + 1);
        alpha_bar.push(1.0);
        let mut acc = 1.0;
        for s in 0..steps {
            let beta = beta_start + (beta_end - beta_start) * s as f64 / span;
            acc *= 1.0 - beta;
            alpha_bar.push(acc);
        }
        let mut schedule = Self::from_alpha_bar(alpha_bar)?;
        schedule.beta_start = beta_start;
        schedule.beta_end = beta_end;
        Ok(schedule)
    }

    /// Wraps an explicit `alpha_bar` table (index 0 is the clean end).
    pub fn from_alpha_bar(alpha_bar: Vec<f64>) -> Result<Self> {
        if alpha_bar.len() < 2 {
            return Err(Error::InvalidSchedule("alpha_bar table needs at least two entries".into()));
        }
        if !(alpha_bar[0] > 0.0 && alpha_bar[0] <= 1.0) {
            return Err(Error::InvalidSchedule(format!("alpha_bar[0] = {} must lie in (0, 1]", alpha_bar[0])));
        }
        for (t, pair) in alpha_bar.windows(2).enumerate() {
            if !(pair[1] < pair[0] && pair[1] > 0.0) {
                return Err(Error::InvalidSchedule(format!(
                    "alpha_bar must be strictly decreasing and positive (t = {})",
                    t + 1
                )));
            }
        }
        Ok(Self { alpha_bar, beta_start: f64::NAN, beta_end: f64::NAN })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.alpha_bar.len() - 1
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `alpha_bar[t]` for `0 <= t <= T`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::StepIndex { t, max: self.steps() })
    }

    /// Builder parameters; `None` for schedules built from an explicit table.
    pub fn beta_range(&self) -> Option<(f64, f64)> {
        (!self.beta_start.is_nan()).then_some((self.beta_start, self.beta_end))
    }

    fn check_noisy_index(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::StepIndex { t, max: self.steps() });
        }
        Ok(())
    }

    pub fn snr(&self, t: usize) -> Result<f64> {
        self.check_noisy_index(t)?;
        let a = self.alpha_bar[t];
        Ok(a / (1.0 - a))
    }

    /// Denoising progress at `t`, for `1 <= t <= T`.
    pub fn phi(&self, t: usize, mode: &PhiMode) -> Result<f64> {
        self.check_noisy_index(t)?;
        match mode {
            PhiMode::SqrtSnr => Ok(self.snr(t)?.sqrt()),
            PhiMode::Snr => self.snr(t),
            PhiMode::Linear => Ok((self.steps() + 1 - t) as f64),
            PhiMode::Table(table) => {
                if table.len() != self.alpha_bar.len() {
                    return Err(Error::InvalidSchedule(format!(
                        "phi table has {} entries, schedule needs {}",
                        table.len(),
                        self.alpha_bar.len()
                    )));
                }
                Ok(table[t])
            }
        }
    }
}

/// Step ratio `(phi_t - phi_t1) / (phi_t1 - phi_t2)` between the progress made
/// by the step being approximated and the step before it.
pub fn gamma(phi_t: f64, phi_t1: f64, phi_t2: f64) -> Result<f64> {
    let num = phi_t - phi_t1;
    let den = phi_t1 - phi_t2;
    if !(num.is_finite() && den.is_finite()) {
        return Err(Error::NonFinite("gamma"));
    }
    if den <= 0.0 || num <= 0.0 {
        return Err(Error::DegenerateSchedule(format!(
            "progress must strictly increase: phi = ({phi_t}, {phi_t1}, {phi_t2})"
        )));
    }
    let g = num / den;
    if !g.is_finite() {
        return Err(Error::NonFinite("gamma"));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    use super::*;

    fn table(a: &[f64]) -> NoiseSchedule {
        NoiseSchedule::from_alpha_bar(a.to_vec()).unwrap()
    }

    #[test]
    fn constant_beta_products() {
        let s = NoiseSchedule::linear_beta(3, 0.1, 0.1).unwrap();
        let expected = [1.0, 0.9, 0.81, 0.729];
        for (got, want) in s.alpha_bars().iter().zip(expected) {
            assert_relative_eq!(*got, want, max_relative = 1e-15);
        }
    }

    #[test]
    fn standard_schedule_terminal_alpha_bar() {
        // Independent product over 1000 terms, computed outside the crate.
        let s = NoiseSchedule::linear_beta(1000, 1e-4, 0.02).unwrap();
        assert_relative_eq!(s.alpha_bar(1000).unwrap(), 4.0358297653756754e-05, max_relative = 1e-12);
    }

    #[test]
    fn rejects_bad_builder_parameters() {
        assert!(matches!(NoiseSchedule::linear_beta(3, 0.5, 0.1), Err(Error::InvalidSchedule(_))));
        assert!(NoiseSchedule::linear_beta(2, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear_beta(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear_beta(10, 0.1, 1.0).is_err());
        assert!(NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.5]).is_err());
    }

    #[test]
    fn phi_modes() {
        let s = table(&[1.0, 0.9, 0.8, 0.5]);
        assert_relative_eq!(s.phi(3, &PhiMode::SqrtSnr).unwrap(), 1.0, max_relative = 1e-15);
        assert_relative_eq!(s.phi(2, &PhiMode::Snr).unwrap(), 4.0, max_relative = 1e-14);
        assert_relative_eq!(s.phi(1, &PhiMode::SqrtSnr).unwrap(), 3.0, max_relative = 1e-14);
        assert_eq!(s.phi(1, &PhiMode::Linear).unwrap(), 3.0);
        assert!(matches!(s.phi(0, &PhiMode::SqrtSnr), Err(Error::StepIndex { .. })));
        assert!(matches!(s.phi(4, &PhiMode::Snr), Err(Error::StepIndex { .. })));
        assert!(s.phi(1, &PhiMode::Table(vec![0.0; 2])).is_err());
    }

    #[test]
    fn gamma_examples() {
        assert_eq!(gamma(3.0, 2.0, 1.0).unwrap(), 1.0);
        assert_relative_eq!(gamma(9.0, 4.0, 1.0).unwrap(), 5.0 / 3.0, max_relative = 1e-15);
        assert!(matches!(gamma(3.0, 2.0, 2.0), Err(Error::DegenerateSchedule(_))));
        assert!(gamma(1.0, 2.0, 3.0).is_err());
    }

    #[test]
    fn gamma_on_forty_step_schedule() {
        let s = NoiseSchedule::linear_beta(40, 1e-4, 0.02).unwrap();
        let phi = |t| s.phi(t, &PhiMode::SqrtSnr).unwrap();
        let g = gamma(phi(20), phi(21), phi(22)).unwrap();
        assert_relative_eq!(g, 1.0988177617477557, max_relative = 1e-12);
    }

    #[test]
    fn gamma_is_one_for_affine_progress() {
        let s = NoiseSchedule::linear_beta(50, 1e-4, 0.02).unwrap();
        for t in 1..=48 {
            let phi = |t| s.phi(t, &PhiMode::Linear).unwrap();
            assert_eq!(gamma(phi(t), phi(t + 1), phi(t + 2)).unwrap(), 1.0);
        }
    }

    proptest! {
        #[test]
        fn alpha_bar_monotone(steps in 3usize..400, b0 in 1e-5f64..0.05, extra in 0.0f64..0.4) {
            let b1 = b0 + extra;
            let s = NoiseSchedule::linear_beta(steps, b0, b1).unwrap();
            let a = s.alpha_bars();
            prop_assert_eq!(a[0], 1.0);
            for w in a.windows(2) {
                prop_assert!(w[1] < w[0] && w[1] > 0.0);
            }
            for t in 1..=steps {
                prop_assert!(s.snr(t).unwrap().is_finite());
                let sq = s.phi(t, &PhiMode::SqrtSnr).unwrap();
                let snr = s.phi(t, &PhiMode::Snr).unwrap();
                prop_assert!((sq * sq - snr).abs() <= 1e-12 * snr.max(1.0));
                if t < steps {
                    prop_assert!(s.phi(t + 1, &PhiMode::SqrtSnr).unwrap() < sq);
                }
            }
        }
    }
}
