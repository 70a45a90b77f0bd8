use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{angle, approx_step, relative_error, transition, wg_closed_form, AccelerationPlan, TransitionOperator};
use crate::error::{Error, Result};
use crate::metrics::psnr;
use crate::model::Denoiser;
use crate::sampler::{real_step, sample_full, validate_grid, Trajectory};
use crate::schedule::{gamma, NoiseSchedule};
use crate::search::golden_section_max;

/// Step ratio for approximating iteration `i` (needs `i >= 2`).
fn step_gamma(schedule: &NoiseSchedule, timesteps: &[usize], plan: &AccelerationPlan, i: usize) -> Result<f64> {
    let phi = |t| schedule.phi(t, &plan.phi_mode);
    gamma(phi(timesteps[i])?, phi(timesteps[i - 1])?, phi(timesteps[i - 2])?)
}

/// Operator of the iteration before `i`, i.e. `x_{i-1} - x_{i-2}`.
fn previous_operator(traj: &Trajectory, i: usize) -> Result<TransitionOperator> {
    let n = traj.iterations();
    transition(traj.state(i - 1), traj.state(i - 2), n - (i - 2))
}

fn start_checked<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    timesteps: &[usize],
) -> Result<Trajectory> {
    validate_grid(schedule, timesteps)?;
    if x_init.len() != denoiser.dim() {
        return Err(Error::DimensionMismatch { expected: denoiser.dim(), got: x_init.len() });
    }
    Ok(Trajectory::start(timesteps, x_init))
}

/// Sampling with extrapolated steps at the plan's accelerated iterations.
///
/// Approximated states feed every later transition. An accelerated iteration
/// whose previous operator is zero falls back to a real evaluation.
pub fn accelerated_sample<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    timesteps: &[usize],
    plan: &AccelerationPlan,
) -> Result<Trajectory> {
    let n = timesteps.len().saturating_sub(1);
    for w in plan.validate_calibrated(n)? {
        log::debug!("{w}");
    }
    let mut traj = start_checked(denoiser, schedule, x_init, timesteps)?;
    for i in 1..=n {
        let x = traj.states[i - 1].clone();
        if plan.is_accelerated(i) {
            let d_prev2 = previous_operator(&traj, i)?;
            if !d_prev2.is_degenerate() {
                let g = step_gamma(schedule, timesteps, plan, i)?;
                let w = plan.weight(i).expect("validated plan has every weight");
                traj.states.push(approx_step(&x, &d_prev2, w, g)?);
                traj.approximated.push(i);
                continue;
            }
            log::warn!("iteration {i}: zero previous transition, evaluating the denoiser instead");
        }
        let next = real_step(denoiser, schedule, &mut traj, &x, timesteps[i - 1], timesteps[i])?;
        traj.states.push(next);
    }
    Ok(traj)
}

/// Diagnostics for one calibrated iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationRecord {
    pub iteration: usize,
    pub gamma: f64,
    pub wg: f64,
    /// Angle between the true operator of this iteration and the previous one.
    pub angle: Option<f64>,
    /// Squared relative error of the extrapolated state against the true one.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Calibration {
    pub wg: BTreeMap<usize, f64>,
    pub records: Vec<CalibrationRecord>,
    /// The calibration run itself, which follows the extrapolated states.
    pub trajectory: Trajectory,
}

/// Per-iteration weights from a single reference run.
///
/// At every accelerated iteration the real next state is computed, the
/// least-squares weight is taken against it, and the run then continues from
/// the extrapolated state so later weights see the drift the accelerated run
/// will see.
pub fn calibrate_wg<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    timesteps: &[usize],
    skeleton: &AccelerationPlan,
) -> Result<Calibration> {
    let n = timesteps.len().saturating_sub(1);
    skeleton.validate(n)?;
    let mut traj = start_checked(denoiser, schedule, x_init, timesteps)?;
    let mut wg = BTreeMap::new();
    let mut records = Vec::new();
    for i in 1..=n {
        let x = traj.states[i - 1].clone();
        let x_true = real_step(denoiser, schedule, &mut traj, &x, timesteps[i - 1], timesteps[i])?;
        if !skeleton.is_accelerated(i) {
            traj.states.push(x_true);
            continue;
        }
        let g = step_gamma(schedule, timesteps, skeleton, i)?;
        let d_prev2 = previous_operator(&traj, i)?;
        let d_true = transition(&x_true, &x, n - (i - 1))?;
        if d_prev2.is_degenerate() {
            log::warn!("iteration {i}: zero previous transition during calibration, using unit extrapolation");
            wg.insert(i, 1.0 / g);
            records.push(CalibrationRecord { iteration: i, gamma: g, wg: 1.0 / g, angle: None, relative_error: None });
            traj.states.push(x_true);
            continue;
        }
        let w = wg_closed_form(&d_true, &d_prev2, g)?;
        let x_star = approx_step(&x, &d_prev2, w, g)?;
        let (theta, eps_r) = if d_true.is_degenerate() {
            (None, None)
        } else {
            (Some(angle(&d_true, &d_prev2)?), Some(relative_error(&x_true, &x_star, &d_true)?))
        };
        records.push(CalibrationRecord { iteration: i, gamma: g, wg: w, angle: theta, relative_error: eps_r });
        wg.insert(i, w);
        traj.states.push(x_star);
        traj.approximated.push(i);
    }
    Ok(Calibration { wg, records, trajectory: traj })
}

/// Search strategy for the bias refinement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SearchMode {
    /// 11-point grid, then golden-section refinement around the best point.
    #[default]
    GridGolden,
    /// Golden-section search over the whole interval.
    Binary,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BiasSearch {
    pub bias: f64,
    pub psnr: f64,
    /// Objective at zero bias, when zero lies in the interval.
    pub psnr_at_zero: Option<f64>,
    pub evaluations: usize,
}

const GRID_POINTS: usize = 11;

/// Maximises `objective(bias)` over `[lo, hi]`. Zero is always a candidate
/// when it lies in the interval, so the result never scores below it.
pub fn maximize_bias<F>(mut objective: F, interval: (f64, f64), mode: SearchMode) -> Result<BiasSearch>
where
    F: FnMut(f64) -> Result<f64>,
{
    let (lo, hi) = interval;
    if !(lo.is_finite() && hi.is_finite()) || lo > hi {
        return Err(Error::Plan(format!("bias interval [{lo}, {hi}] is invalid")));
    }
    let mut evaluations = 0usize;
    let mut eval = |b: f64| -> Result<f64> {
        evaluations += 1;
        objective(b)
    };
    if lo == hi {
        let p = eval(lo)?;
        return Ok(BiasSearch { bias: lo, psnr: p, psnr_at_zero: (lo == 0.0).then_some(p), evaluations: 1 });
    }

    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let psnr_at_zero = if lo <= 0.0 && 0.0 <= hi {
        let p = eval(0.0)?;
        candidates.push((0.0, p));
        Some(p)
    } else {
        None
    };
    let tol = 1e-7 * (hi - lo);
    match mode {
        SearchMode::GridGolden => {
            let step = (hi - lo) / (GRID_POINTS - 1) as f64;
            let grid: Vec<f64> = (0..GRID_POINTS).map(|k| lo + step * k as f64).collect();
            let mut scores = Vec::with_capacity(GRID_POINTS);
            for &b in &grid {
                scores.push(eval(b)?);
            }
            let best = (0..GRID_POINTS).fold(0, |best, k| if scores[k] > scores[best] { k } else { best });
            candidates.extend(grid.iter().copied().zip(scores.iter().copied()));
            let left = grid[best.saturating_sub(1)];
            let right = grid[(best + 1).min(GRID_POINTS - 1)];
            candidates.push(golden_section_max(&mut eval, left, right, tol, 200)?);
        }
        SearchMode::Binary => {
            candidates.push(golden_section_max(&mut eval, lo, hi, tol, 200)?);
        }
    }
    let (bias, best) = candidates.iter().copied().fold(candidates[0], |acc, c| if c.1 > acc.1 { c } else { acc });
    Ok(BiasSearch { bias, psnr: best, psnr_at_zero, evaluations })
}

/// Bias maximising PSNR between the full run's final state and the
/// accelerated run's final state with weights `wg + bias`.
pub fn refine_bias<D: Denoiser + ?Sized>(
    denoiser: &D,
    schedule: &NoiseSchedule,
    x_init: &[f64],
    timesteps: &[usize],
    plan: &AccelerationPlan,
    interval: (f64, f64),
    mode: SearchMode,
) -> Result<BiasSearch> {
    let full = sample_full(denoiser, schedule, x_init, timesteps)?;
    let reference = full.final_state().to_vec();
    maximize_bias(
        |bias| {
            let trial = plan.clone().with_bias(bias);
            let accel = accelerated_sample(denoiser, schedule, x_init, timesteps, &trial)?;
            psnr(&reference, accel.final_state())
        },
        interval,
        mode,
    )
}
