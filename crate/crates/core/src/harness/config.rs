//! Experiment configuration files and named presets.
//!
//! Configs are TOML. Every table rejects unknown keys, and a preset is merged
//! underneath the user's file key by key, so a file only needs to list what it
//! changes.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ltc::{AccelerationPlan, SearchMode, DEFAULT_BIAS_INTERVAL, DEFAULT_PERIOD, DEFAULT_TAU};
use crate::model::{DiagGmm, PointMass, BENCHMARK};
use crate::sampler::timestep_grid;
use crate::schedule::{NoiseSchedule, PhiMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Angles,
    Calibrate,
    Refine,
    Sample,
    AblateSkip,
    Report,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Angles => "angles",
            Mode::Calibrate => "calibrate",
            Mode::Refine => "refine",
            Mode::Sample => "sample",
            Mode::AblateSkip => "ablate-skip",
            Mode::Report => "report",
        })
    }
}

impl Mode {
    pub const ALL: [Mode; 6] =
        [Mode::Angles, Mode::Calibrate, Mode::Refine, Mode::Sample, Mode::AblateSkip, Mode::Report];
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL.into_iter().find(|m| m.to_string() == s).ok_or_else(|| Error::Config(format!("unknown mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub train_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Sampling iterations.
    pub iterations: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { train_steps: 1000, beta_start: 1e-4, beta_end: 0.02, iterations: 40 }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear_beta(self.train_steps, self.beta_start, self.beta_end)
    }

    pub fn grid(&self) -> Result<Vec<usize>> {
        timestep_grid(self.train_steps, self.iterations)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DenoiserConfig {
    /// The seeded synthetic mixture.
    Benchmark {
        dim: usize,
        components: usize,
        seed: u64,
    },
    PointMass {
        mu: Vec<f64>,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        variances: Vec<Vec<f64>>,
    },
    /// Recorded predictions; config seeds index the trace's seeds.
    Trace {
        manifest: PathBuf,
    },
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        let (dim, components, seed) = BENCHMARK;
        DenoiserConfig::Benchmark { dim, components, seed }
    }
}

/// Analytic denoisers built from a [`DenoiserConfig`].
#[derive(Debug, Clone)]
pub enum Analytic {
    PointMass(PointMass),
    Gmm(DiagGmm),
}

impl DenoiserConfig {
    /// Builds the analytic denoiser, or `None` for a recorded trace.
    pub fn analytic(&self) -> Result<Option<Analytic>> {
        Ok(match self {
            DenoiserConfig::Benchmark { dim, components, seed } => {
                Some(Analytic::Gmm(DiagGmm::benchmark(*dim, *components, *seed)?))
            }
            DenoiserConfig::PointMass { mu } => Some(Analytic::PointMass(PointMass::new(mu.clone())?)),
            DenoiserConfig::Gmm { weights, means, variances } => {
                Some(Analytic::Gmm(DiagGmm::new(weights.clone(), means.clone(), variances.clone())?))
            }
            DenoiserConfig::Trace { .. } => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlanConfig {
    /// Explicit inclusive iteration interval.
    pub interval: Option<[usize; 2]>,
    /// Accelerate iterations after this one, up to the second-to-last.
    pub after: Option<usize>,
    /// Detect the interval from the mean angle trace of the configured seeds.
    pub auto: bool,
    pub period: usize,
    pub tau: f64,
    pub bias: f64,
    /// Search the bias on the calibration seed instead of using `bias`.
    pub refine: bool,
    pub bias_interval: [f64; 2],
    pub search: SearchMode,
    pub phi_mode: PhiMode,
    /// Calibrated weights to load instead of calibrating (`Timestep,Weight`).
    pub wg_file: Option<PathBuf>,
    /// Points in the PSNR-versus-bias sweep.
    pub bias_points: usize,
}

impl Default for PlanConfig {
    fn default() -> Self {
        Self {
            interval: None,
            after: None,
            auto: false,
            period: DEFAULT_PERIOD,
            tau: DEFAULT_TAU,
            bias: 0.0,
            refine: false,
            bias_interval: [DEFAULT_BIAS_INTERVAL.0, DEFAULT_BIAS_INTERVAL.1],
            search: SearchMode::default(),
            phi_mode: PhiMode::default(),
            wg_file: None,
            bias_points: 31,
        }
    }
}

impl PlanConfig {
    /// Plan skeleton without weights. `None` in the interval slot means the
    /// interval still has to be detected.
    pub fn skeleton(&self, iterations: usize) -> Result<Option<AccelerationPlan>> {
        let chosen = [self.interval.is_some(), self.after.is_some(), self.auto];
        if chosen.iter().filter(|&&c| c).count() > 1 {
            return Err(Error::Config("plan: set at most one of `interval`, `after`, `auto`".into()));
        }
        let plan = if let Some([a, b]) = self.interval {
            AccelerationPlan::new(Some((a, b)), self.period)
        } else if let Some(threshold) = self.after {
            AccelerationPlan::after(threshold, iterations, self.period)
        } else if self.auto {
            return Ok(None);
        } else {
            AccelerationPlan::new(None, self.period)
        };
        Ok(Some(self.decorate(plan)))
    }

    pub(crate) fn decorate(&self, plan: AccelerationPlan) -> AccelerationPlan {
        plan.with_tau(self.tau).with_bias(self.bias).with_phi_mode(self.phi_mode.clone())
    }

    pub fn bias_range(&self) -> (f64, f64) {
        (self.bias_interval[0], self.bias_interval[1])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    pub seeds: Vec<u64>,
    /// Seed whose run supplies calibrated weights and the refined bias.
    #[serde(default)]
    pub calibration_seed: u64,
    #[serde(default)]
    pub schedule: ScheduleConfig,
    #[serde(default)]
    pub denoiser: DenoiserConfig,
    #[serde(default)]
    pub plan: PlanConfig,
}

fn default_mode() -> Mode {
    Mode::Sample
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = text.parse().map_err(|e| Error::Config(format!("{e}")))?;
        Self::from_table(value)
    }

    fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, optionally layered over a preset. Relative paths inside
    /// the file resolve against its directory.
    pub fn load(path: Option<&Path>, preset: Option<&str>) -> Result<Self> {
        let mut table = match preset {
            Some(name) => preset_table(name)?,
            None => toml::Table::new(),
        };
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let user: toml::Table = text.parse().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            merge(&mut table, user);
        } else if preset.is_none() {
            return Err(Error::Config("need a config file or a preset".into()));
        }
        let mut cfg = Self::from_table(table)?;
        if let Some(dir) = path.and_then(Path::parent) {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let DenoiserConfig::Trace { manifest } = &mut self.denoiser {
            fix(manifest);
        }
        if let Some(p) = &mut self.plan.wg_file {
            fix(p);
        }
    }

    /// Checks everything that can be checked without running a sampler.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("`seeds` must list at least one seed".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("`seeds` contains duplicates".into()));
        }
        self.schedule.build()?;
        self.schedule.grid()?;
        let n = self.schedule.iterations;
        if let Some(plan) = self.plan.skeleton(n)? {
            for w in plan.validate(n)? {
                log::warn!("{w}");
            }
        } else {
            self.plan.decorate(AccelerationPlan::new(None, self.plan.period)).validate(n)?;
        }
        let [lo, hi] = self.plan.bias_interval;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config(format!("bias_interval [{lo}, {hi}] is invalid")));
        }
        if self.plan.bias_points < 2 {
            return Err(Error::Config("bias_points must be at least 2".into()));
        }
        if let PhiMode::Table(t) = &self.plan.phi_mode {
            if t.len() != self.schedule.train_steps + 1 {
                return Err(Error::Config(format!(
                    "phi table has {} entries, schedule needs {}",
                    t.len(),
                    self.schedule.train_steps + 1
                )));
            }
        }
        if let Some(analytic) = self.denoiser.analytic()? {
            let dim = match analytic {
                Analytic::PointMass(p) => p.mu.len(),
                Analytic::Gmm(g) => crate::model::Denoiser::dim(&g),
            };
            if dim == 0 {
                return Err(Error::Config("denoiser dimension is zero".into()));
            }
        }
        Ok(())
    }

    /// Canonical TOML text of the resolved config.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

/// Recursively overlays `top` onto `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

pub const PRESETS: [&str; 5] = ["sd2-ddim-40", "sd2-ddim-50", "sd2-ddim-100", "fig2-trace", "fig4-bias"];

fn preset_text(name: &str) -> Option<&'static str> {
    Some(match name {
        "sd2-ddim-40" => {
            "mode = \"sample\"\nseeds = [100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111, 112, 113, 114, 115, 116, 117, 118, 119]\n\
             [schedule]\niterations = 40\n[plan]\nafter = 12\n"
        }
        "sd2-ddim-50" => {
            "mode = \"sample\"\nseeds = [100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111, 112, 113, 114, 115, 116, 117, 118, 119]\n\
             [schedule]\niterations = 50\n[plan]\nafter = 10\n"
        }
        "sd2-ddim-100" => {
            "mode = \"sample\"\nseeds = [100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111, 112, 113, 114, 115, 116, 117, 118, 119]\n\
             [schedule]\niterations = 100\n[plan]\nafter = 20\n"
        }
        "fig2-trace" => {
            "mode = \"angles\"\nseeds = [0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19]\n\
             [schedule]\niterations = 40\n[plan]\ninterval = [12, 38]\n"
        }
        "fig4-bias" => {
            "mode = \"refine\"\nseeds = [100, 101, 102, 103, 104, 105, 106, 107, 108, 109, 110, 111, 112, 113, 114, 115, 116, 117, 118, 119]\n\
             [schedule]\niterations = 40\n[plan]\nafter = 12\nrefine = true\n"
        }
        _ => return None,
    })
}

fn preset_table(name: &str) -> Result<toml::Table> {
    let text = preset_text(name).ok_or_else(|| Error::UnknownPreset(name.to_string()))?;
    Ok(text.parse().expect("preset text is valid TOML"))
}

/// Fully resolved config for a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    ExperimentConfig::from_table(preset_table(name)?)
}

/// Parses seed lists such as `1,2,5` or `100..120` (end exclusive).
pub fn parse_seed_set<S: AsRef<str>>(items: &[S]) -> Result<Vec<u64>> {
    let mut seeds = Vec::new();
    let bad = |s: &str| Error::Config(format!("bad seed set entry `{s}`"));
    for item in items {
        for part in item.as_ref().split(',').map(str::trim).filter(|p| !p.is_empty()) {
            if let Some((a, b)) = part.split_once("..") {
                let a: u64 = a.parse().map_err(|_| bad(part))?;
                let b: u64 = b.parse().map_err(|_| bad(part))?;
                if a >= b {
                    return Err(bad(part));
                }
                seeds.extend(a..b);
            } else {
                seeds.push(part.parse().map_err(|_| bad(part))?);
            }
        }
    }
    if seeds.is_empty() {
        return Err(Error::Config("empty seed set".into()));
    }
    Ok(seeds)
}
