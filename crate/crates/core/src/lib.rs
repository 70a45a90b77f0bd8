//! Training-free acceleration of deterministic diffusion sampling.
//!
//! Consecutive transition operators `x_t - x_{t+1}` of a deterministic sampler
//! are nearly parallel over a long middle stretch of the trajectory. Inside that
//! stretch a denoising step can be replaced by a scaled copy of the previous
//! transition, saving one denoiser evaluation per replaced step.
//!
//! The crate is organised bottom-up:
//!
//! * [`schedule`]: variance-preserving noise schedules, SNR and progress maps.
//! * [`model`]: exact closed-form denoisers and a replay denoiser for recorded traces.
//! * [`sampler`]: deterministic DDIM sampling and the skipping-steps baseline.
//! * [`ltc`]: transition operators, angles, extrapolated steps, weight calibration
//!   and bias refinement.
//! * [`metrics`]: PSNR, end-state errors, speedup and per-iteration summaries.
//! * [`harness`]: experiment configuration, presets and the CLI runner.

pub mod error;
pub mod harness;
pub mod ltc;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod schedule;
pub mod search;
mod vector;

pub use error::{Error, Result};
pub use ltc::{
    accelerated_sample, angle, approx_step, calibrate_wg, detect_interval, refine_bias, relative_error, transition,
    wg_closed_form, AccelerationPlan, AngleTrace, BiasSearch, Calibration, SearchMode, TransitionOperator,
};
pub use metrics::{end_error, nfe_speedup, psnr, EndError, RunReport};
pub use model::{Denoiser, DenoiserSpec, DiagGmm, PointMass, Trace, TraceManifest};
pub use sampler::{ddim_step, sample_full, sample_skipping, timestep_grid, Trajectory};
pub use schedule::{gamma, NoiseSchedule, PhiMode};
