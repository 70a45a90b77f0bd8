//! Noise predictors `eps(x, t)`.
//!
//! The analytic denoisers return the exact noise prediction of a data
//! distribution pushed through the variance-preserving forward process,
//! `eps = -sqrt(1 - alpha_bar_t) * grad log p_t(x)`. They stand in for a
//! trained network, so every sampler quantity has a ground truth.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::vector::{all_finite, log_sum_exp};

const BENCH_MEAN_SCALE: f64 = 3.0;
const BENCH_VAR: (f64, f64) = (0.8, 1.2);

/// Dimension, component count and generator seed of the default benchmark.
pub const BENCHMARK: (usize, usize, u64) = (16, 4, 1);

mod trace;

pub use trace::{read_trace, write_trace, Trace, TraceManifest, TraceReplay};

pub trait Denoiser: Send + Sync {
    fn dim(&self) -> usize;

    /// Predicted noise at latent `x` and schedule timestep `t` (`1..=T`).
    fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        (**self).epsilon(x, t, schedule)
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        (**self).epsilon(x, t, schedule)
    }
}

/// Validates a query and returns `alpha_bar_t`.
fn check_query(dim: usize, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<f64> {
    if x.len() != dim {
        return Err(Error::DimensionMismatch { expected: dim, got: x.len() });
    }
    if !all_finite(x) {
        return Err(Error::NonFinite("denoiser input"));
    }
    if t == 0 || t > schedule.steps() {
        return Err(Error::StepIndex { t, max: schedule.steps() });
    }
    schedule.alpha_bar(t)
}

/// All data mass at a single point `mu`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass {
    pub mu: Vec<f64>,
}

impl PointMass {
    pub fn new(mu: Vec<f64>) -> Result<Self> {
        if mu.is_empty() || !all_finite(&mu) {
            return Err(Error::InvalidDenoiser("point mass needs a finite, non-empty mean".into()));
        }
        Ok(Self { mu })
    }
}

impl Denoiser for PointMass {
    fn dim(&self) -> usize {
        self.mu.len()
    }

    fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let a = check_query(self.dim(), x, t, schedule)?;
        let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
        Ok(x.iter().zip(&self.mu).map(|(xi, mi)| (xi - sa * mi) / sn).collect())
    }
}

/// Gaussian mixture with diagonal covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGmm {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    variances: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
}

impl DiagGmm {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::InvalidDenoiser("mixture needs at least one component".into()));
        }
        if means.len() != k || variances.len() != k {
            return Err(Error::InvalidDenoiser(format!(
                "{k} weights but {} means and {} variance rows",
                means.len(),
                variances.len()
            )));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::InvalidDenoiser("weights must be strictly positive".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDenoiser(format!("weights sum to {total}, not 1")));
        }
        let dim = means[0].len();
        if dim == 0 {
            return Err(Error::InvalidDenoiser("zero-dimensional mixture".into()));
        }
        for (m, v) in means.iter().zip(&variances) {
            if m.len() != dim || v.len() != dim {
                return Err(Error::InvalidDenoiser("inconsistent component dimensions".into()));
            }
            if !all_finite(m) {
                return Err(Error::InvalidDenoiser("non-finite component mean".into()));
            }
            if v.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
                return Err(Error::InvalidDenoiser("variances must be finite and >= 0".into()));
            }
        }
        let log_weights = weights.iter().map(|w| w.ln()).collect();
        Ok(Self { weights, means, variances, log_weights })
    }

    /// The fixed synthetic benchmark: `components` well-separated clusters in
    /// `dim` dimensions, drawn from a seeded generator.
    ///
    /// Means are standard normal entries scaled by 3, per-dimension variances
    /// lie in `[0.8, 1.2)` and weights in proportion to `1 + U(0, 1)`.
    pub fn benchmark(dim: usize, components: usize, seed: u64) -> Result<Self> {
        if dim == 0 || components == 0 {
            return Err(Error::InvalidDenoiser("benchmark needs dim > 0 and components > 0".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut means = Vec::with_capacity(components);
        let mut variances = Vec::with_capacity(components);
        let mut raw_weights = Vec::with_capacity(components);
        for _ in 0..components {
            means.push((0..dim).map(|_| BENCH_MEAN_SCALE * rng.sample::<f64, _>(StandardNormal)).collect());
            variances.push((0..dim).map(|_| BENCH_VAR.0 + (BENCH_VAR.1 - BENCH_VAR.0) * rng.random::<f64>()).collect());
            raw_weights.push(1.0 + rng.random::<f64>());
        }
        let total: f64 = raw_weights.iter().sum();
        let mut weights: Vec<f64> = raw_weights.iter().map(|w| w / total).collect();
        // Absorb the rounding residue so the weights sum to one within 1e-12.
        let residue = 1.0 - weights.iter().sum::<f64>();
        weights[0] += residue;
        Self::new(weights, means, variances)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn variances(&self) -> &[Vec<f64>] {
        &self.variances
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    /// Per-component log joint `log w_k + log N(x; sqrt(a) mu_k, a var_k + 1 - a)`
    /// along with the diffused variances.
    fn component_terms(&self, x: &[f64], a: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
        let sa = a.sqrt();
        let noise = 1.0 - a;
        let mut logs = Vec::with_capacity(self.components());
        let mut diffused = Vec::with_capacity(self.components());
        for k in 0..self.components() {
            let vars: Vec<f64> = self.variances[k].iter().map(|s| a * s + noise).collect();
            let mut lp = self.log_weights[k];
            for j in 0..x.len() {
                let r = x[j] - sa * self.means[k][j];
                lp -= 0.5 * ((2.0 * std::f64::consts::PI * vars[j]).ln() + r * r / vars[j]);
            }
            logs.push(lp);
            diffused.push(vars);
        }
        (logs, diffused)
    }

    /// `log p_t(x)` of the diffused marginal.
    pub fn log_density(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<f64> {
        let a = check_query(self.dim(), x, t, schedule)?;
        let (logs, _) = self.component_terms(x, a);
        Ok(log_sum_exp(&logs))
    }
}

impl Denoiser for DiagGmm {
    fn dim(&self) -> usize {
        self.means[0].len()
    }

    fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let a = check_query(self.dim(), x, t, schedule)?;
        let sa = a.sqrt();
        let (logs, vars) = self.component_terms(x, a);
        let norm = log_sum_exp(&logs);
        let mut score = vec![0.0; x.len()];
        for k in 0..self.components() {
            let resp = (logs[k] - norm).exp();
            if resp == 0.0 {
                continue;
            }
            for j in 0..x.len() {
                score[j] -= resp * (x[j] - sa * self.means[k][j]) / vars[k][j];
            }
        }
        let scale = -(1.0 - a).sqrt();
        let eps: Vec<f64> = score.into_iter().map(|s| scale * s).collect();
        if !all_finite(&eps) {
            return Err(Error::NonFinite("mixture noise prediction"));
        }
        Ok(eps)
    }
}

/// Declarative denoiser choice, as named in experiment configs.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserSpec {
    PointMass(PointMass),
    DiagGmm(DiagGmm),
    RecordedTrace { manifest_path: PathBuf },
}

/// Counts `epsilon` calls on the wrapped denoiser.
#[derive(Debug)]
pub struct CountingDenoiser<D> {
    inner: D,
    calls: AtomicUsize,
}

impl<D> CountingDenoiser<D> {
    pub fn new(inner: D) -> Self {
        Self { inner, calls: AtomicUsize::new(0) }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }
}

impl<D: Denoiser> Denoiser for CountingDenoiser<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn epsilon(&self, x: &[f64], t: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.epsilon(x, t, schedule)
    }
}

/// Standard-normal initial latent for `seed`.
pub fn initial_noise(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.sample(StandardNormal)).collect()
}

#[cfg(test)]
mod tests {
    use approx::assert_relative_eq;

    use super::*;

    fn schedule() -> NoiseSchedule {
        NoiseSchedule::linear_beta(1000, 1e-4, 0.02).unwrap()
    }

    /// Schedule whose timestep 1 has alpha_bar = 0.5.
    fn half_schedule() -> NoiseSchedule {
        NoiseSchedule::from_alpha_bar(vec![1.0, 0.5, 0.25]).unwrap()
    }

    fn bimodal() -> DiagGmm {
        DiagGmm::new(vec![0.5, 0.5], vec![vec![1.0], vec![-1.0]], vec![vec![0.01], vec![0.01]]).unwrap()
    }

    /// Independent 1-D log-density of the diffused bimodal mixture.
    fn bimodal_log_density(x: f64, a: f64) -> f64 {
        let var = a * 0.01 + 1.0 - a;
        let g = |m: f64| {
            let r = x - a.sqrt() * m;
            (-(r * r) / (2.0 * var)).exp() / (2.0 * std::f64::consts::PI * var).sqrt()
        };
        (0.5 * g(1.0) + 0.5 * g(-1.0)).ln()
    }

    #[test]
    fn point_mass_at_origin_scales_input() {
        let s = schedule();
        let pm = PointMass::new(vec![0.0; 3]).unwrap();
        let x = [0.3, -1.2, 2.0];
        for t in [1, 17, 500, 1000] {
            let a = s.alpha_bar(t).unwrap();
            let eps = pm.epsilon(&x, t, &s).unwrap();
            for (e, xi) in eps.iter().zip(x) {
                assert_relative_eq!(*e, xi / (1.0 - a).sqrt(), max_relative = 1e-15);
            }
        }
    }

    #[test]
    fn point_mass_recovers_mean_exactly() {
        let s = schedule();
        let mu = vec![0.7, -0.4, 1.9, 0.0];
        let pm = PointMass::new(mu.clone()).unwrap();
        let x = initial_noise(3, 4);
        for t in [1, 250, 999] {
            let a = s.alpha_bar(t).unwrap();
            let eps = pm.epsilon(&x, t, &s).unwrap();
            for j in 0..4 {
                let x0 = (x[j] - (1.0 - a).sqrt() * eps[j]) / a.sqrt();
                assert!((x0 - mu[j]).abs() <= 1e-12 * (1.0 + mu[j].abs()), "t={t} j={j}");
            }
        }
    }

    #[test]
    fn single_gaussian_score_vanishes_at_marginal_mean() {
        let s = schedule();
        let mu = vec![1.0, -2.0];
        let g = DiagGmm::new(vec![1.0], vec![mu.clone()], vec![vec![0.3, 0.1]]).unwrap();
        let t = 300;
        let sa = s.alpha_bar(t).unwrap().sqrt();
        let x: Vec<f64> = mu.iter().map(|m| sa * m).collect();
        let eps = g.epsilon(&x, t, &s).unwrap();
        assert!(eps.iter().all(|e| e.abs() < 1e-15));
    }

    #[test]
    fn symmetric_mixture_matches_finite_differences() {
        let s = half_schedule();
        let g = bimodal();
        assert_eq!(g.epsilon(&[0.0], 1, &s).unwrap(), vec![0.0]);

        let (x, h, a) = (0.3, 1e-5, 0.5);
        let grad = (bimodal_log_density(x + h, a) - bimodal_log_density(x - h, a)) / (2.0 * h);
        let expected = -(1.0f64 - a).sqrt() * grad;
        let eps = g.epsilon(&[x], 1, &s).unwrap()[0];
        assert_relative_eq!(eps, expected, max_relative = 1e-4);
        assert_relative_eq!(g.log_density(&[x], 1, &s).unwrap(), bimodal_log_density(x, a), max_relative = 1e-12);
    }

    #[test]
    fn zero_variance_single_component_equals_point_mass() {
        let s = schedule();
        let mu = vec![0.5, -1.5, 2.5];
        let g = DiagGmm::new(vec![1.0], vec![mu.clone()], vec![vec![0.0; 3]]).unwrap();
        let pm = PointMass::new(mu).unwrap();
        let x = initial_noise(11, 3);
        for t in [1, 40, 600, 1000] {
            let a = g.epsilon(&x, t, &s).unwrap();
            let b = pm.epsilon(&x, t, &s).unwrap();
            for (u, v) in a.iter().zip(&b) {
                assert_relative_eq!(*u, *v, max_relative = 1e-12, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn responsibilities_do_not_underflow_far_from_data() {
        let s = schedule();
        let g = bimodal();
        let eps = g.epsilon(&[40.0], 1, &s).unwrap();
        assert!(eps[0].is_finite() && eps[0] > 0.0);
    }

    #[test]
    fn query_validation() {
        let s = schedule();
        let g = bimodal();
        assert!(matches!(g.epsilon(&[f64::NAN], 10, &s), Err(Error::NonFinite(_))));
        assert!(matches!(g.epsilon(&[0.0, 1.0], 10, &s), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(g.epsilon(&[0.0], 0, &s), Err(Error::StepIndex { .. })));
        assert!(matches!(g.epsilon(&[0.0], 1001, &s), Err(Error::StepIndex { .. })));
    }

    #[test]
    fn mixture_validation() {
        assert!(DiagGmm::new(vec![0.5, 0.4], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(DiagGmm::new(vec![1.0, 0.0], vec![vec![0.0], vec![1.0]], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(DiagGmm::new(vec![1.0], vec![vec![0.0]], vec![vec![-1.0]]).is_err());
        assert!(DiagGmm::new(vec![0.5, 0.5], vec![vec![0.0], vec![1.0, 2.0]], vec![vec![1.0], vec![1.0]]).is_err());
        let b = DiagGmm::benchmark(16, 4, 7).unwrap();
        assert_eq!(b.dim(), 16);
        assert!((b.weights().iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn counting_wrapper_counts() {
        let s = schedule();
        let c = CountingDenoiser::new(bimodal());
        for t in 1..=5 {
            c.epsilon(&[0.1], t, &s).unwrap();
        }
        assert_eq!(c.calls(), 5);
        c.reset();
        assert_eq!(c.calls(), 0);
    }
}
