//! Python bindings for `ltc-core`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use ltc_core::harness::{self, ExperimentConfig, Mode, PRESETS};
use ltc_core::model::initial_noise as core_initial_noise;
use ltc_core::{self as core, AccelerationPlan, DiagGmm, PointMass};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;

create_exception!(ltc_accel, LtcError, PyException, "Error raised by the sampler core.");

fn err(e: core::Error) -> PyErr {
    LtcError::new_err((e.to_string(), e.exit_code()))
}

#[pyclass(name = "NoiseSchedule", module = "ltc_accel", frozen)]
struct PySchedule(core::NoiseSchedule);

#[pymethods]
impl PySchedule {
    #[new]
    #[pyo3(signature = (steps = 1000, beta_start = 1e-4, beta_end = 0.02))]
    fn new(steps: usize, beta_start: f64, beta_end: f64) -> PyResult<Self> {
        core::NoiseSchedule::linear_beta(steps, beta_start, beta_end).map(Self).map_err(err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    fn alpha_bar(&self, t: usize) -> PyResult<f64> {
        self.0.alpha_bar(t).map_err(err)
    }

    fn snr(&self, t: usize) -> PyResult<f64> {
        self.0.snr(t).map_err(err)
    }
}

enum Model {
    Gmm(DiagGmm),
    Point(PointMass),
}

/// Closed-form denoiser: a diagonal Gaussian mixture or a point mass.
#[pyclass(name = "Denoiser", module = "ltc_accel", frozen)]
struct PyDenoiser(Model);

impl PyDenoiser {
    fn inner(&self) -> &dyn core::Denoiser {
        match &self.0 {
            Model::Gmm(g) => g,
            Model::Point(p) => p,
        }
    }
}

#[pymethods]
impl PyDenoiser {
    #[staticmethod]
    #[pyo3(signature = (dim = 16, components = 4, seed = 1))]
    fn benchmark(dim: usize, components: usize, seed: u64) -> PyResult<Self> {
        DiagGmm::benchmark(dim, components, seed).map(|g| Self(Model::Gmm(g))).map_err(err)
    }

    #[staticmethod]
    fn gmm(weights: Vec<f64>, means: Vec<Vec<f64>>, variances: Vec<Vec<f64>>) -> PyResult<Self> {
        DiagGmm::new(weights, means, variances).map(|g| Self(Model::Gmm(g))).map_err(err)
    }

    #[staticmethod]
    fn point_mass(mu: Vec<f64>) -> PyResult<Self> {
        PointMass::new(mu).map(|p| Self(Model::Point(p))).map_err(err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner().dim()
    }

    fn epsilon(&self, x: Vec<f64>, t: usize, schedule: &PySchedule) -> PyResult<Vec<f64>> {
        self.inner().epsilon(&x, t, &schedule.0).map_err(err)
    }
}

#[pyclass(name = "Trajectory", module = "ltc_accel", frozen)]
struct PyTrajectory(core::Trajectory);

#[pymethods]
impl PyTrajectory {
    #[getter]
    fn states(&self) -> Vec<Vec<f64>> {
        self.0.states.clone()
    }

    #[getter]
    fn timesteps(&self) -> Vec<usize> {
        self.0.timesteps.clone()
    }

    #[getter]
    fn nfe(&self) -> usize {
        self.0.nfe
    }

    #[getter]
    fn approximated(&self) -> Vec<usize> {
        self.0.approximated.clone()
    }

    #[getter]
    fn final_state(&self) -> Vec<f64> {
        self.0.final_state().to_vec()
    }

    /// Angle between consecutive transitions, keyed by iteration.
    fn angles(&self) -> PyResult<Vec<(usize, f64)>> {
        let trace = core::AngleTrace::from_trajectory(&self.0).map_err(err)?;
        Ok(trace.iterations().zip(trace.angles.iter().copied()).collect())
    }

    fn __len__(&self) -> usize {
        self.0.states.len()
    }

    fn __repr__(&self) -> String {
        format!("Trajectory(iterations={}, nfe={})", self.0.iterations(), self.0.nfe)
    }
}

/// Which iterations to approximate, their weights and the shared bias.
#[pyclass(name = "AccelerationPlan", module = "ltc_accel", frozen)]
struct PyPlan(AccelerationPlan);

#[pymethods]
impl PyPlan {
    #[new]
    #[pyo3(signature = (interval = None, period = 2, wg = None, bias = 0.0))]
    fn new(interval: Option<(usize, usize)>, period: usize, wg: Option<BTreeMap<usize, f64>>, bias: f64) -> Self {
        Self(AccelerationPlan::new(interval, period).with_wg(wg.unwrap_or_default()).with_bias(bias))
    }

    #[staticmethod]
    #[pyo3(signature = (threshold, iterations, period = 2))]
    fn after(threshold: usize, iterations: usize, period: usize) -> Self {
        Self(AccelerationPlan::after(threshold, iterations, period))
    }

    #[getter]
    fn interval(&self) -> Option<(usize, usize)> {
        self.0.interval
    }

    #[getter]
    fn period(&self) -> usize {
        self.0.period
    }

    #[getter]
    fn wg(&self) -> BTreeMap<usize, f64> {
        self.0.wg.clone()
    }

    #[getter]
    fn bias(&self) -> f64 {
        self.0.bias
    }

    fn with_wg(&self, wg: BTreeMap<usize, f64>) -> Self {
        Self(self.0.clone().with_wg(wg))
    }

    fn with_bias(&self, bias: f64) -> Self {
        Self(self.0.clone().with_bias(bias))
    }

    fn accelerated_iterations(&self, iterations: usize) -> Vec<usize> {
        self.0.accelerated_iterations(iterations)
    }

    fn __repr__(&self) -> String {
        format!("AccelerationPlan(interval={:?}, period={}, bias={})", self.0.interval, self.0.period, self.0.bias)
    }
}

#[pyfunction]
#[pyo3(signature = (train_steps, iterations))]
fn timestep_grid(train_steps: usize, iterations: usize) -> PyResult<Vec<usize>> {
    core::timestep_grid(train_steps, iterations).map_err(err)
}

#[pyfunction]
fn initial_noise(seed: u64, dim: usize) -> Vec<f64> {
    core_initial_noise(seed, dim)
}

#[pyfunction]
fn sample_full(
    denoiser: &PyDenoiser,
    schedule: &PySchedule,
    x_init: Vec<f64>,
    timesteps: Vec<usize>,
) -> PyResult<PyTrajectory> {
    core::sample_full(denoiser.inner(), &schedule.0, &x_init, &timesteps).map(PyTrajectory).map_err(err)
}

#[pyfunction]
fn sample_skipping(
    denoiser: &PyDenoiser,
    schedule: &PySchedule,
    x_init: Vec<f64>,
    timesteps: Vec<usize>,
    skipped: BTreeSet<usize>,
) -> PyResult<PyTrajectory> {
    core::sample_skipping(denoiser.inner(), &schedule.0, &x_init, &timesteps, &skipped).map(PyTrajectory).map_err(err)
}

#[pyfunction]
fn accelerated_sample(
    denoiser: &PyDenoiser,
    schedule: &PySchedule,
    x_init: Vec<f64>,
    timesteps: Vec<usize>,
    plan: &PyPlan,
) -> PyResult<PyTrajectory> {
    core::accelerated_sample(denoiser.inner(), &schedule.0, &x_init, &timesteps, &plan.0).map(PyTrajectory).map_err(err)
}

/// Calibrated plan for `skeleton`, plus `(iteration, gamma, weight)` records.
#[pyfunction]
fn calibrate(
    denoiser: &PyDenoiser,
    schedule: &PySchedule,
    x_init: Vec<f64>,
    timesteps: Vec<usize>,
    skeleton: &PyPlan,
) -> PyResult<(PyPlan, Vec<(usize, f64, f64)>)> {
    let cal = core::calibrate_wg(denoiser.inner(), &schedule.0, &x_init, &timesteps, &skeleton.0).map_err(err)?;
    let records = cal.records.iter().map(|r| (r.iteration, r.gamma, r.wg)).collect();
    Ok((PyPlan(skeleton.0.clone().with_wg(cal.wg)), records))
}

/// Best bias in `interval` and the PSNR it reaches.
#[pyfunction]
#[pyo3(signature = (denoiser, schedule, x_init, timesteps, plan, interval = (-0.05, 0.10)))]
fn refine_bias(
    denoiser: &PyDenoiser,
    schedule: &PySchedule,
    x_init: Vec<f64>,
    timesteps: Vec<usize>,
    plan: &PyPlan,
    interval: (f64, f64),
) -> PyResult<(f64, f64)> {
    let search = core::refine_bias(
        denoiser.inner(),
        &schedule.0,
        &x_init,
        &timesteps,
        &plan.0,
        interval,
        core::SearchMode::default(),
    )
    .map_err(err)?;
    Ok((search.bias, search.psnr))
}

#[pyfunction]
fn psnr(reference: Vec<f64>, test: Vec<f64>) -> PyResult<f64> {
    core::psnr(&reference, &test).map_err(err)
}

/// `(absolute, relative percent)` error between two final states.
#[pyfunction]
fn end_error(full: &PyTrajectory, accel: &PyTrajectory) -> PyResult<(f64, f64)> {
    core::end_error(&full.0, &accel.0).map(|e| (e.absolute, e.relative_percent)).map_err(err)
}

#[pyfunction]
fn nfe_speedup(iterations: usize, nfe: usize) -> PyResult<f64> {
    core::nfe_speedup(iterations, nfe).map_err(err)
}

#[pyfunction]
fn presets() -> Vec<&'static str> {
    PRESETS.to_vec()
}

/// Runs one experiment and returns the written file names and content hash.
#[pyfunction]
#[pyo3(signature = (mode, out, config = None, preset = None, jobs = 1))]
fn run_experiment(
    py: Python<'_>,
    mode: &str,
    out: PathBuf,
    config: Option<&str>,
    preset: Option<&str>,
    jobs: usize,
) -> PyResult<(Vec<String>, String)> {
    let mode: Mode = mode.parse().map_err(err)?;
    let mut cfg = match (config, preset) {
        (Some(text), None) => ExperimentConfig::from_toml(text).map_err(err)?,
        (None, name) => ExperimentConfig::load(None, name).map_err(err)?,
        (Some(_), Some(_)) => {
            return Err(LtcError::new_err(("pass either a config string or a preset, not both".to_string(), 2)))
        }
    };
    cfg.mode = mode;
    let result = py.detach(|| harness::run(&cfg, &out, jobs)).map_err(err)?;
    Ok((result.files.clone(), result.content_hash.clone()))
}

#[pymodule]
fn ltc_accel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LtcError", m.py().get_type::<LtcError>())?;
    m.add_class::<PySchedule>()?;
    m.add_class::<PyDenoiser>()?;
    m.add_class::<PyTrajectory>()?;
    m.add_class::<PyPlan>()?;
    m.add_function(wrap_pyfunction!(timestep_grid, m)?)?;
    m.add_function(wrap_pyfunction!(initial_noise, m)?)?;
    m.add_function(wrap_pyfunction!(sample_full, m)?)?;
    m.add_function(wrap_pyfunction!(sample_skipping, m)?)?;
    m.add_function(wrap_pyfunction!(accelerated_sample, m)?)?;
    m.add_function(wrap_pyfunction!(calibrate, m)?)?;
    m.add_function(wrap_pyfunction!(refine_bias, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(end_error, m)?)?;
    m.add_function(wrap_pyfunction!(nfe_speedup, m)?)?;
    m.add_function(wrap_pyfunction!(presets, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
