//! Multi-seed experiments: configuration, execution and report files.
//!
//! [`run`] computes every seed on a worker pool, collects the results in seed
//! order and only then writes files from the calling thread, so the output of a
//! config does not depend on the number of workers.

mod config;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

pub use config::{
    parse_seed_set, preset, Analytic, DenoiserConfig, ExperimentConfig, Mode, PlanConfig, ScheduleConfig, PRESETS,
};

use crate::error::{Error, Result};
use crate::ltc::{
    accelerated_sample, calibrate_wg, refine_bias, AccelerationPlan, AngleTrace, BiasSearch, CalibrationRecord,
};
use crate::metrics::{
    aggregate, psnr, read_rows, write_angle_band, write_rows, write_summary, write_text, RunReport, ERROR_HEADERS,
    PSNR_HEADERS, WEIGHT_HEADERS,
};
use crate::model::{initial_noise, read_trace, Denoiser, Trace};
use crate::sampler::{sample_full, sample_skipping, Trajectory};
use crate::schedule::NoiseSchedule;

pub const REPORT_HEADERS: [&str; 9] =
    ["Seed", "Method", "Iterations", "NFE", "Speedup", "PSNR", "Absolute Error", "Relative Error", "Fingerprint"];
pub const WG_HEADERS: [&str; 2] = ["Timestep", "Weight"];
pub const CALIBRATION_HEADERS: [&str; 6] = ["Seed", "Timestep", "Gamma", "Weight", "Angle", "Relative Error"];

/// What a run produced.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub dir: PathBuf,
    /// Files written, relative to `dir`, sorted.
    pub files: Vec<String>,
    pub config_hash: String,
    /// SHA-256 over the names and bytes of every file except the manifest.
    pub content_hash: String,
    pub interval: Option<(usize, usize)>,
    pub bias: f64,
    pub reports: Vec<(String, RunReport)>,
}

enum Model {
    Analytic(Analytic),
    Trace(Trace),
}

struct Runner<'a> {
    cfg: &'a ExperimentConfig,
    schedule: NoiseSchedule,
    grid: Vec<usize>,
    model: Model,
    fingerprint: String,
    dir: PathBuf,
    files: BTreeSet<String>,
    pool: rayon::ThreadPool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().fold(String::with_capacity(64), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

/// Runs `cfg.mode` into `out` with at most `jobs` workers (0 = all cores).
pub fn run(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunOutput> {
    cfg.validate()?;
    let mut runner = Runner::new(cfg, out, jobs)?;
    let (interval, bias, reports) = match cfg.mode {
        Mode::Angles => {
            let fulls = runner.full_runs()?;
            let detected = runner.write_angles(&fulls)?;
            (detected, cfg.plan.bias, runner.baseline_reports(&fulls)?)
        }
        Mode::Calibrate => {
            let skeleton = runner.skeleton(None)?;
            runner.write_calibration(&skeleton)?;
            (skeleton.interval, cfg.plan.bias, Vec::new())
        }
        Mode::Refine => {
            let plan = runner.calibrated_plan(None)?;
            let fulls = runner.full_runs()?;
            runner.write_bias_sweep(&plan, &fulls)?;
            let plan = plan.clone().with_bias(runner.search_bias(&plan)?.bias);
            let reports = runner.accelerated_reports(&plan, &fulls)?;
            runner.write_errors("error_summary", &reports)?;
            (plan.interval, plan.bias, reports)
        }
        Mode::Sample | Mode::AblateSkip => {
            let plan = runner.final_plan(None)?;
            let fulls = runner.full_runs()?;
            let mut reports = runner.accelerated_reports(&plan, &fulls)?;
            runner.write_errors("error_summary", &reports)?;
            if cfg.mode == Mode::AblateSkip {
                reports.extend(runner.skip_reports(&plan, &fulls)?);
            }
            (plan.interval, plan.bias, reports)
        }
        Mode::Report => {
            let fulls = runner.full_runs()?;
            let detected = runner.write_angles(&fulls)?;
            let skeleton = runner.skeleton(Some(detected))?;
            runner.write_calibration(&skeleton)?;
            let plan = runner.final_plan(Some(detected))?;
            runner.write_bias_sweep(&plan, &fulls)?;
            let mut reports = runner.baseline_reports(&fulls)?;
            let accel = runner.accelerated_reports(&plan, &fulls)?;
            runner.write_errors("error_summary", &accel)?;
            reports.extend(accel);
            reports.extend(runner.skip_reports(&plan, &fulls)?);
            (plan.interval, plan.bias, reports)
        }
    };
    runner.write_report(&reports)?;
    runner.finish(interval, bias, reports)
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ExperimentConfig, out: &Path, jobs: usize) -> Result<Self> {
        let schedule = cfg.schedule.build()?;
        let grid = cfg.schedule.grid()?;
        let model = match cfg.denoiser.analytic()? {
            Some(a) => Model::Analytic(a),
            None => {
                let DenoiserConfig::Trace { manifest } = &cfg.denoiser else { unreachable!() };
                let trace = read_trace(manifest)?;
                if trace.steps() != cfg.schedule.iterations {
                    return Err(Error::Config(format!(
                        "trace holds {} steps, schedule samples {} iterations",
                        trace.steps(),
                        cfg.schedule.iterations
                    )));
                }
                let needed = cfg.seeds.iter().chain([&cfg.calibration_seed]).max().copied().unwrap_or(0);
                if needed as usize >= trace.seeds() {
                    return Err(Error::Config(format!("seed {needed} outside the trace's {} seeds", trace.seeds())));
                }
                Model::Trace(trace)
            }
        };
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        let config_hash = sha256_hex(cfg.to_toml().as_bytes());
        Ok(Self {
            cfg,
            schedule,
            grid,
            model,
            fingerprint: config_hash[..16].to_string(),
            dir: out.to_path_buf(),
            files: BTreeSet::new(),
            pool,
        })
    }

    fn dim(&self) -> usize {
        match &self.model {
            Model::Analytic(Analytic::PointMass(p)) => p.dim(),
            Model::Analytic(Analytic::Gmm(g)) => g.dim(),
            Model::Trace(t) => t.dim(),
        }
    }

    fn with_denoiser<R>(&self, seed: u64, f: impl FnOnce(&dyn Denoiser) -> Result<R>) -> Result<R> {
        match &self.model {
            Model::Analytic(Analytic::PointMass(p)) => f(p),
            Model::Analytic(Analytic::Gmm(g)) => f(g),
            Model::Trace(t) => f(&t.replay(seed as usize, &self.grid)),
        }
    }

    /// Maps `f` over the configured seeds on the pool, keeping seed order.
    fn per_seed<R: Send>(&self, f: impl Fn(u64) -> Result<R> + Sync) -> Result<Vec<R>> {
        self.pool.install(|| self.cfg.seeds.par_iter().map(|&s| f(s)).collect())
    }

    fn x_init(&self, seed: u64) -> Vec<f64> {
        initial_noise(seed, self.dim())
    }

    fn full_run(&self, seed: u64) -> Result<Trajectory> {
        self.with_denoiser(seed, |d| sample_full(d, &self.schedule, &self.x_init(seed), &self.grid))
            .map(|t| t.with_seed(seed))
    }

    fn full_runs(&self) -> Result<Vec<Trajectory>> {
        self.per_seed(|s| self.full_run(s))
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.insert(name.to_string());
        self.dir.join(name)
    }

    /// Writes per-seed and banded angle traces; returns the interval detected
    /// on the mean trace.
    fn write_angles(&mut self, fulls: &[Trajectory]) -> Result<Option<(usize, usize)>> {
        let traces = fulls.iter().map(AngleTrace::from_trajectory).collect::<Result<Vec<_>>>()?;
        let series: Vec<Vec<(f64, f64)>> =
            traces.iter().map(|t| t.iterations().map(|i| i as f64).zip(t.angles.iter().copied()).collect()).collect();
        for (traj, s) in fulls.iter().zip(&series) {
            let rows: Vec<[f64; 2]> = s.iter().map(|&(k, v)| [k, v]).collect();
            let path = self.path(&format!("angle_seed{}.csv", traj.seed));
            write_rows(&path, crate::metrics::ANGLE_HEADERS, &rows)?;
        }
        let band = aggregate(&series)?;
        for suffix in ["mean", "min", "max"] {
            self.path(&format!("angle_{suffix}.csv"));
        }
        write_angle_band(&self.dir, "angle", &band)?;
        let mean = AngleTrace { first_iteration: 2, angles: band.iter().map(|r| r.mean).collect() };
        Ok(clamp_interval(mean.detect(self.cfg.plan.tau), self.cfg.schedule.iterations))
    }

    /// Plan skeleton, detecting the interval when the config asks for it.
    fn skeleton(&mut self, detected: Option<Option<(usize, usize)>>) -> Result<AccelerationPlan> {
        let n = self.cfg.schedule.iterations;
        if let Some(plan) = self.cfg.plan.skeleton(n)? {
            return Ok(plan);
        }
        let interval = match detected {
            Some(d) => d,
            None => {
                let fulls = self.full_runs()?;
                let traces = fulls.iter().map(AngleTrace::from_trajectory).collect::<Result<Vec<_>>>()?;
                let series: Vec<Vec<(f64, f64)>> = traces
                    .iter()
                    .map(|t| t.iterations().map(|i| i as f64).zip(t.angles.iter().copied()).collect())
                    .collect();
                let mean =
                    AngleTrace { first_iteration: 2, angles: aggregate(&series)?.iter().map(|r| r.mean).collect() };
                clamp_interval(mean.detect(self.cfg.plan.tau), n)
            }
        };
        if interval.is_none() {
            log::warn!("no low-angle interval below tau = {}; sampling without acceleration", self.cfg.plan.tau);
        }
        let plan = self.cfg.plan.decorate(AccelerationPlan::new(interval, self.cfg.plan.period));
        plan.validate(n)?;
        Ok(plan)
    }

    fn calibrate(
        &self,
        seed: u64,
        skeleton: &AccelerationPlan,
    ) -> Result<(BTreeMap<usize, f64>, Vec<CalibrationRecord>)> {
        self.with_denoiser(seed, |d| calibrate_wg(d, &self.schedule, &self.x_init(seed), &self.grid, skeleton))
            .map(|c| (c.wg, c.records))
    }

    /// Skeleton plus weights from the weight file or the calibration seed.
    fn calibrated_plan(&mut self, detected: Option<Option<(usize, usize)>>) -> Result<AccelerationPlan> {
        let skeleton = self.skeleton(detected)?;
        let wg = match &self.cfg.plan.wg_file {
            Some(path) => read_weights(path)?,
            None => self.calibrate(self.cfg.calibration_seed, &skeleton)?.0,
        };
        let plan = skeleton.with_wg(wg);
        plan.validate_calibrated(self.cfg.schedule.iterations)?;
        let rows: Vec<[f64; 2]> = plan.wg.iter().map(|(&i, &w)| [i as f64, w]).collect();
        let path = self.path("wg.csv");
        write_rows(&path, WG_HEADERS, &rows)?;
        Ok(plan)
    }

    /// Calibrated plan with its bias, refined on the calibration seed when asked.
    fn final_plan(&mut self, detected: Option<Option<(usize, usize)>>) -> Result<AccelerationPlan> {
        let plan = self.calibrated_plan(detected)?;
        if !self.cfg.plan.refine {
            return Ok(plan);
        }
        let search = self.search_bias(&plan)?;
        Ok(plan.with_bias(search.bias))
    }

    fn search_bias(&self, plan: &AccelerationPlan) -> Result<BiasSearch> {
        let seed = self.cfg.calibration_seed;
        let search = self.with_denoiser(seed, |d| {
            refine_bias(
                d,
                &self.schedule,
                &self.x_init(seed),
                &self.grid,
                plan,
                self.cfg.plan.bias_range(),
                self.cfg.plan.search,
            )
        })?;
        log::info!("refined bias {} ({} dB, {} evaluations)", search.bias, search.psnr, search.evaluations);
        Ok(search)
    }

    fn write_calibration(&mut self, skeleton: &AccelerationPlan) -> Result<()> {
        let results = self.per_seed(|s| self.calibrate(s, skeleton))?;
        let series: Vec<Vec<(f64, f64)>> =
            results.iter().map(|(wg, _)| wg.iter().map(|(&i, &w)| (i as f64, w)).collect()).collect();
        if series.first().is_some_and(|s| !s.is_empty()) {
            let path = self.path("latent_wg_summary.csv");
            write_summary(&path, WEIGHT_HEADERS, &aggregate(&series)?)?;
        }
        let mut rows = Vec::new();
        for (&seed, (_, records)) in self.cfg.seeds.iter().zip(&results) {
            for r in records {
                rows.push([
                    seed as f64,
                    r.iteration as f64,
                    r.gamma,
                    r.wg,
                    r.angle.unwrap_or(f64::NAN),
                    r.relative_error.unwrap_or(f64::NAN),
                ]);
            }
        }
        let path = self.path("calibration.csv");
        write_rows(&path, CALIBRATION_HEADERS, &rows)?;
        let cal_seed = self.cfg.calibration_seed;
        let wg = match self.cfg.seeds.iter().position(|&s| s == cal_seed) {
            Some(k) => results[k].0.clone(),
            None => self.calibrate(cal_seed, skeleton)?.0,
        };
        let rows: Vec<[f64; 2]> = wg.iter().map(|(&i, &w)| [i as f64, w]).collect();
        let path = self.path("wg.csv");
        write_rows(&path, WG_HEADERS, &rows)
    }

    /// Mean, min and max PSNR against full sampling over a uniform bias grid.
    fn write_bias_sweep(&mut self, plan: &AccelerationPlan, fulls: &[Trajectory]) -> Result<()> {
        let (lo, hi) = self.cfg.plan.bias_range();
        let points = self.cfg.plan.bias_points;
        let biases: Vec<f64> = (0..points)
            .map(|k| if k + 1 == points { hi } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 })
            .collect();
        let per_seed = self.per_seed(|seed| {
            let k = self.cfg.seeds.iter().position(|&s| s == seed).expect("configured seed");
            let reference = fulls[k].final_state();
            biases
                .iter()
                .map(|&b| {
                    let trial = plan.clone().with_bias(b);
                    let accel = self.with_denoiser(seed, |d| {
                        accelerated_sample(d, &self.schedule, &self.x_init(seed), &self.grid, &trial)
                    })?;
                    Ok((b, psnr(reference, accel.final_state())?))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let path = self.path("psnr_summary.csv");
        write_summary(&path, PSNR_HEADERS, &aggregate(&per_seed)?)
    }

    fn baseline_reports(&self, fulls: &[Trajectory]) -> Result<Vec<(String, RunReport)>> {
        fulls
            .iter()
            .map(|f| {
                let mut r = RunReport::compare(f, f, &self.fingerprint)?;
                r.angle_trace = Some(AngleTrace::from_trajectory(f)?);
                Ok(("full".to_string(), r))
            })
            .collect()
    }

    fn accelerated_reports(&self, plan: &AccelerationPlan, fulls: &[Trajectory]) -> Result<Vec<(String, RunReport)>> {
        let accels = self.per_seed(|seed| {
            self.with_denoiser(seed, |d| accelerated_sample(d, &self.schedule, &self.x_init(seed), &self.grid, plan))
                .map(|t| t.with_seed(seed))
        })?;
        fulls
            .iter()
            .zip(&accels)
            .map(|(f, a)| {
                let mut r = RunReport::compare(f, a, &self.fingerprint)?;
                r.wg = plan.wg.iter().map(|(&i, &w)| (i, w + plan.bias)).collect();
                Ok(("ltc".to_string(), r))
            })
            .collect()
    }

    /// Skipping-steps baseline at the plan's accelerated positions.
    fn skip_reports(&self, plan: &AccelerationPlan, fulls: &[Trajectory]) -> Result<Vec<(String, RunReport)>> {
        let skipped: BTreeSet<usize> = plan.accelerated_iterations(self.cfg.schedule.iterations).into_iter().collect();
        let skips = self.per_seed(|seed| {
            self.with_denoiser(seed, |d| sample_skipping(d, &self.schedule, &self.x_init(seed), &self.grid, &skipped))
                .map(|t| t.with_seed(seed))
        })?;
        fulls
            .iter()
            .zip(&skips)
            .map(|(f, k)| Ok(("skip".to_string(), RunReport::compare(f, k, &self.fingerprint)?)))
            .collect()
    }

    /// Per-iteration relative (percent) and absolute state errors.
    fn write_errors(&mut self, stem: &str, reports: &[(String, RunReport)]) -> Result<()> {
        let rel: Vec<Vec<(f64, f64)>> = reports
            .iter()
            .map(|(_, r)| r.error_trace.iter().map(|(i, e)| (*i as f64, e.relative_percent)).collect())
            .collect();
        let abs: Vec<Vec<(f64, f64)>> =
            reports.iter().map(|(_, r)| r.error_trace.iter().map(|(i, e)| (*i as f64, e.absolute)).collect()).collect();
        let path = self.path(&format!("{stem}.csv"));
        write_summary(&path, ERROR_HEADERS, &aggregate(&rel)?)?;
        let path = self.path(&format!("{stem}_abs.csv"));
        write_summary(&path, ERROR_HEADERS, &aggregate(&abs)?)
    }

    fn write_report(&mut self, reports: &[(String, RunReport)]) -> Result<()> {
        let path = self.path("report.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(REPORT_HEADERS)?;
        for (method, r) in reports {
            w.write_record([
                r.seed.to_string(),
                method.clone(),
                r.iterations.to_string(),
                r.nfe.to_string(),
                r.speedup.to_string(),
                r.psnr.to_string(),
                r.end_error.absolute.to_string(),
                r.end_error.relative_percent.to_string(),
                r.fingerprint.clone(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        Ok(())
    }

    fn finish(
        mut self,
        interval: Option<(usize, usize)>,
        bias: f64,
        reports: Vec<(String, RunReport)>,
    ) -> Result<RunOutput> {
        let mut hasher = Sha256::new();
        let mut listing = String::new();
        for name in &self.files {
            let path = self.dir.join(name);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            hasher.update(name.as_bytes());
            hasher.update([0u8]);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(&bytes);
            let _ = writeln!(listing, "{name:?} = \"{}\"", sha256_hex(&bytes));
        }
        let content_hash: String = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
        let config_text = self.cfg.to_toml();
        let config_hash = sha256_hex(config_text.as_bytes());
        let mut manifest = String::new();
        let _ = writeln!(manifest, "mode = \"{}\"", self.cfg.mode);
        let _ = writeln!(manifest, "config_hash = \"{config_hash}\"");
        let _ = writeln!(manifest, "content_hash = \"{content_hash}\"");
        match interval {
            Some((a, b)) => {
                let _ = writeln!(manifest, "interval = [{a}, {b}]");
            }
            None => manifest.push_str("interval = []\n"),
        }
        let _ = writeln!(manifest, "bias = {bias:?}");
        let _ = writeln!(manifest, "\n[files]\n{listing}");
        let _ = writeln!(manifest, "[config]\n{}", indent_tables(&config_text));
        let path = self.path("manifest.toml");
        write_text(&path, &manifest)?;
        Ok(RunOutput {
            dir: self.dir,
            files: self.files.into_iter().collect(),
            config_hash,
            content_hash,
            interval,
            bias,
            reports,
        })
    }
}

/// Nests the tables of a top-level TOML document under `[config]`.
fn indent_tables(text: &str) -> String {
    text.lines()
        .map(|l| match l.strip_prefix('[') {
            Some(rest) if !l.starts_with("[[") => format!("[config.{rest}"),
            _ => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

fn clamp_interval(detected: Option<(usize, usize)>, iterations: usize) -> Option<(usize, usize)> {
    let (a, b) = detected?;
    let (a, b) = (a.max(2), b.min(iterations.saturating_sub(1)));
    (a <= b).then_some((a, b))
}

/// Loads a `Timestep,Weight` table.
pub fn read_weights(path: &Path) -> Result<BTreeMap<usize, f64>> {
    read_rows(path, &WG_HEADERS)?
        .into_iter()
        .map(|row| {
            let (i, w) = (row[0], row[1]);
            if i < 0.0 || i.fract() != 0.0 || !w.is_finite() {
                return Err(Error::Config(format!("{}: bad weight row {row:?}", path.display())));
            }
            Ok((i as usize, w))
        })
        .collect()
}
