//! Fidelity, error and speed metrics, and the CSV tables built from them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ltc::AngleTrace;
use crate::sampler::Trajectory;
use crate::vector::{check_dims, norm, sub};

/// PSNR ceiling, reported when the MSE is negligible against the range.
pub const PSNR_CAP_DB: f64 = 99.0;

/// `10 log10(MAX^2 / MSE)` with `MAX` the peak-to-peak range of `reference`.
pub fn psnr(reference: &[f64], test: &[f64]) -> Result<f64> {
    check_dims(reference, test)?;
    if reference.is_empty() {
        return Err(Error::UndefinedPsnr);
    }
    let (lo, hi) = reference.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::UndefinedPsnr);
    }
    let mse = reference.iter().zip(test).map(|(r, t)| (r - t) * (r - t)).sum::<f64>() / reference.len() as f64;
    if !mse.is_finite() {
        return Err(Error::NonFinite("PSNR input"));
    }
    let peak = range * range;
    if mse < 1e-12 * peak {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak / mse).log10())
}

/// Distance between two final states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EndError {
    pub absolute: f64,
    /// `absolute / |reference|`, in percent.
    pub relative_percent: f64,
}

fn state_error(reference: &[f64], other: &[f64]) -> Result<EndError> {
    check_dims(reference, other)?;
    let scale = norm(reference);
    if scale == 0.0 {
        return Err(Error::ZeroNorm("end error against a zero reference state"));
    }
    let absolute = norm(&sub(reference, other));
    Ok(EndError { absolute, relative_percent: 100.0 * absolute / scale })
}

pub fn end_error(full: &Trajectory, accel: &Trajectory) -> Result<EndError> {
    if full.timesteps.last() != accel.timesteps.last() {
        return Err(Error::Misaligned("trajectories end at different timesteps".into()));
    }
    state_error(full.final_state(), accel.final_state())
}

/// Per-position errors between two runs on the same grid, indexed by iteration
/// (position 0, the shared initial latent, is skipped).
pub fn error_trace(full: &Trajectory, accel: &Trajectory) -> Result<Vec<(usize, EndError)>> {
    if full.timesteps != accel.timesteps {
        return Err(Error::Misaligned("trajectories use different grids".into()));
    }
    (1..full.states.len()).map(|i| Ok((i, state_error(full.state(i), accel.state(i))?))).collect()
}

pub fn nfe_speedup(total_iterations: usize, nfe: usize) -> Result<f64> {
    if nfe == 0 {
        return Err(Error::Plan("speedup undefined for zero evaluations".into()));
    }
    if nfe > total_iterations {
        return Err(Error::Plan(format!("nfe {nfe} exceeds {total_iterations} iterations")));
    }
    Ok(total_iterations as f64 / nfe as f64)
}

/// Outcome of one accelerated (or baseline) run against its full-sampling reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seed: u64,
    pub iterations: usize,
    pub nfe: usize,
    pub speedup: f64,
    pub psnr: f64,
    pub end_error: EndError,
    pub angle_trace: Option<AngleTrace>,
    /// Per-iteration `(iteration, error)` against the reference run.
    pub error_trace: Vec<(usize, EndError)>,
    pub wg: BTreeMap<usize, f64>,
    pub fingerprint: String,
}

impl RunReport {
    pub fn compare(full: &Trajectory, accel: &Trajectory, fingerprint: &str) -> Result<Self> {
        let iterations = full.iterations();
        Ok(Self {
            seed: accel.seed,
            iterations,
            nfe: accel.nfe,
            speedup: nfe_speedup(iterations, accel.nfe)?,
            psnr: psnr(full.final_state(), accel.final_state())?,
            end_error: end_error(full, accel)?,
            angle_trace: None,
            error_trace: if full.timesteps == accel.timesteps { error_trace(full, accel)? } else { Vec::new() },
            wg: BTreeMap::new(),
            fingerprint: fingerprint.to_string(),
        })
    }
}

/// Mean, min and max of one column across runs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryRow {
    pub key: f64,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

/// Column-wise statistics over aligned series of `(key, value)` pairs.
///
/// Values are sorted before summation, so the result does not depend on the
/// order of `series`.
pub fn aggregate(series: &[Vec<(f64, f64)>]) -> Result<Vec<SummaryRow>> {
    let first = series.first().ok_or_else(|| Error::Misaligned("no series to aggregate".into()))?;
    for (k, s) in series.iter().enumerate() {
        if s.len() != first.len() || s.iter().zip(first).any(|(a, b)| a.0 != b.0) {
            return Err(Error::Misaligned(format!("series {k} uses a different key grid")));
        }
    }
    let mut rows = Vec::with_capacity(first.len());
    let mut column = Vec::with_capacity(series.len());
    for (j, &(key, _)) in first.iter().enumerate() {
        column.clear();
        column.extend(series.iter().map(|s| s[j].1));
        column.sort_by(f64::total_cmp);
        let mean = column.iter().sum::<f64>() / column.len() as f64;
        rows.push(SummaryRow { key, mean, min: column[0], max: column[column.len() - 1] });
    }
    Ok(rows)
}

pub const ANGLE_HEADERS: [&str; 2] = ["Timestep", "Angle"];
pub const ERROR_HEADERS: [&str; 4] = ["Timestep", "Average Error", "Min Error", "Max Error"];
pub const WEIGHT_HEADERS: [&str; 4] = ["Timestep", "Mean", "Min", "Max"];
pub const PSNR_HEADERS: [&str; 4] = ["Bias", "Mean PSNR", "Min PSNR", "Max PSNR"];

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

/// Writes a header line and numeric rows.
pub fn write_rows<const N: usize>(path: &Path, headers: [&str; N], rows: &[[f64; N]]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(headers)?;
    for row in rows {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn write_summary(path: &Path, headers: [&str; 4], rows: &[SummaryRow]) -> Result<()> {
    let rows: Vec<[f64; 4]> = rows.iter().map(|r| [r.key, r.mean, r.min, r.max]).collect();
    write_rows(path, headers, &rows)
}

/// Writes `Timestep,Angle` as the mean, min and max of `rows` into
/// `<stem>_mean.csv`, `<stem>_min.csv` and `<stem>_max.csv`.
pub fn write_angle_band(dir: &Path, stem: &str, rows: &[SummaryRow]) -> Result<()> {
    for (suffix, pick) in [("mean", 0usize), ("min", 1), ("max", 2)] {
        let series: Vec<[f64; 2]> = rows.iter().map(|r| [r.key, [r.mean, r.min, r.max][pick]]).collect();
        write_rows(&dir.join(format!("{stem}_{suffix}.csv")), ANGLE_HEADERS, &series)?;
    }
    Ok(())
}

/// Reads a numeric CSV, checking its header line matches `headers` exactly.
pub fn read_rows(path: &Path, headers: &[&str]) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::Reader::from_path(path)?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != headers {
        return Err(Error::Misaligned(format!("{}: header {found:?}, expected {headers:?}", path.display())));
    }
    let mut rows = Vec::new();
    for record in r.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|_| Error::Misaligned(format!("{}: non-numeric field `{field}`", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Writes arbitrary text, used for manifests and reports with mixed columns.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}
