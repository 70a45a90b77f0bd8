//! Deterministic DDIM sampling (`eta = 0`).
//!
//! Sampling runs over a descending grid of schedule timesteps
//! `grid[0] = T > grid[1] > ... > grid[N] = 0`. Iteration `i` (1-based) moves
//! the latent from grid position `i - 1` to position `i`; all acceleration
//! conditions count these iterations from the noisy end.

use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::model::Denoiser;
use crate::schedule::NoiseSchedule;
use crate::vector::all_finite;

/// Evenly spaced descending grid of `iterations + 1` timesteps from
/// `train_steps` down to 0.
pub fn timestep_grid(train_steps: usize, iterations: usize) -> Result<Vec<usize>> {
    if iterations == 0 || iterations > train_steps {
        return Err(Error::Grid(format!("iterations must lie in 1..={train_steps}, got {iterations}")));
    }
    Ok((0..=iterations).map(|k| (iterations - k) * train_steps / iterations).collect())
}

pub(crate) fn validate_grid(schedule: &NoiseSchedule, timesteps: &[usize]) -> Result<()> {
    if timesteps.len() < 2 {
        return Err(Error::Grid("need at least two timesteps".into()));
    }
    if timesteps[0] != schedule.steps() {
        return Err(Error::Grid(format!(
            "grid starts at {} but the schedule has T = {}",
            timesteps[0],
            schedule.steps()
        )));
    }
    if *timesteps.last().unwrap() != 0 {
        return Err(Error::Grid("grid must end at timestep 0".into()));
    }
    if timesteps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Grid("grid must be strictly descending".into()));
    }
    Ok(())
}

/// One sampling run: the states visited, the predictions used and the number
/// of denoiser evaluations spent.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub seed: u64,
    /// Timestep of each state; `states[k]` sits at `timesteps[k]`.
    pub timesteps: Vec<usize>,
    pub states: Vec<Vec<f64>>,
    /// Prediction used at each evaluated timestep.
    pub eps_cache: BTreeMap<usize, Vec<f64>>,
    pub nfe: usize,
    /// Iterations produced by extrapolation instead of a denoiser call.
    pub approximated: Vec<usize>,
}

impl Trajectory {
    pub(crate) fn start(timesteps: &[usize], x_init: &[f64]) -> Self {
        let mut states = Vec::with_capacity(timesteps.len());
        states.push(x_init.to_vec());
        Self {
            seed: 0,
            timesteps: timesteps.to_vec(),
            states,
            eps_cache: BTreeMap::new(),
            nfe: 0,
            approximated: Vec::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn iterations(&self) -> usize {
        self.timesteps.len() - 1
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has at least the initial state")
    }

    pub fn state(&self, position: usize) -> &[f64] {
        &self.states[position]
    }
}

/// `x_prev = sqrt(a_prev) * x0_hat + sqrt(1 - a_prev) * eps` with
/// `x0_hat = (x - sqrt(1 - a) * eps) / sqrt(a)`.
pub fn ddim_update(x: &[f64], eps: &[f64], alpha_bar: f64, alpha_bar_prev: f64) -> Vec<f64> {
    let (sa, sn) = (alpha_bar.sqrt(), (1.0 - alpha_bar).sqrt());
    let (pa, pn) = (alpha_bar_prev.sqrt(), (1.0 - alpha_bar_prev).sqrt());
    x.iter()
        .zip(eps)
        .map(|(xi, ei)| {
            let x0 = (xi - sn * ei) / sa;
            pa * x0 + pn * ei
        })
        .collect()
}

/// Deterministic DDIM step from timestep `t` to `t_prev < t`.
pub fn ddim_step(x_t: &[f64], eps: &[f64], schedule: &NoiseSchedule, t: usize, t_prev: usize) -> Result<Vec<f64>> {
    if t_prev >= t {
        return Err(Error::Grid(format!("DDIM step must descend: {t} -> {t_prev}")));
    }
    if x_t.len() != eps.len() {
        return Err(Error::DimensionMismatch { expected: x_t.len(), got: eps.len() });
    }
    let a = schedule.alpha_bar(t)?;
    let a_prev = schedule.alpha_bar(t_prev)?;
    let out = ddim_update(x_t, eps, a, a_prev);
    if !all_finite(&out) {
        return Err(Error::NonFinite("DDIM step"));
    }
    Ok(out)
}

/// Evaluates the denoiser at position `from` and steps to `to`.
pub(crate) fn real_step<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    traj: &mut Trajectory,
    x: &[f64],
    t: usize,
    t_prev: usize,
) -> Result<Vec<f64>> {
    let eps = denoiser.epsilon(x, t, schedule)?;
    let next = ddim_step(x, &eps, schedule, t, t_prev)?;
    traj.nfe += 1;
    traj.eps_cache.insert(t, eps);
    Ok(next)
}

fn check_init<D: Denoiser + ?Sized>(denoiser: &D, x_init: &[f64]) -> Result<()> {
    if x_init.len() != denoiser.dim() {
        return Err(Error::DimensionMismatch { expected: denoiser.dim(), got: x_init.len() });
    }
    if !all_finite(x_init) {
        return Err(Error::NonFinite("initial latent"));
    }
    Ok(())
}

/// Plain sampling: one denoiser call per iteration.
pub fn sample_full<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    timesteps: &[usize],
) -> Result<Trajectory> {
    validate_grid(schedule, timesteps)?;
    check_init(denoiser, x_init)?;
    let mut traj = Trajectory::start(timesteps, x_init);
    for i in 1..timesteps.len() {
        let x = traj.states[i - 1].clone();
        let next = real_step(denoiser, schedule, &mut traj, &x, timesteps[i - 1], timesteps[i])?;
        traj.states.push(next);
    }
    Ok(traj)
}

/// Skipping-steps baseline: the grid positions in `skipped` are dropped and
/// DDIM jumps straight across them.
///
/// Positions are iteration indices, so skipping position `i` removes the
/// state iteration `i` would have produced. Endpoints cannot be skipped.
pub fn sample_skipping<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    timesteps: &[usize],
    skipped: &BTreeSet<usize>,
) -> Result<Trajectory> {
    validate_grid(schedule, timesteps)?;
    let last = timesteps.len() - 1;
    if let Some(bad) = skipped.iter().find(|&&p| p == 0 || p >= last) {
        return Err(Error::Plan(format!(
            "cannot skip grid position {bad}; only interior positions 1..={} may be skipped",
            last - 1
        )));
    }
    let kept: Vec<usize> =
        timesteps.iter().enumerate().filter(|(p, _)| !skipped.contains(p)).map(|(_, &t)| t).collect();
    sample_full(denoiser, schedule, x_init, &kept)
}
