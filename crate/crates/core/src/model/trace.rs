//! Recorded noise-prediction traces.
//!
//! A trace is a raw little-endian `f32` file plus a `key=value` manifest:
//!
//! ```text
//! dim=4
//! steps=40
//! seeds=2
//! data=trace.f32
//! endian=little
//! crc32=1c291ca3
//! ```
//!
//! Values are ordered seed-major, then by step from `steps` down to 1, then by
//! dimension. Step `k` holds the prediction made when `k` sampling iterations
//! remain, so step `steps` is the first (noisiest) call. `data` is resolved
//! relative to the manifest's directory.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Denoiser;
use crate::schedule::NoiseSchedule;
use crate::vector::all_finite;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceManifest {
    pub dim: usize,
    pub steps: usize,
    pub seeds: usize,
    pub data: PathBuf,
    pub crc32: u32,
}

impl TraceManifest {
    pub fn data_len_bytes(&self) -> u64 {
        (self.seeds * self.steps * self.dim * 4) as u64
    }

    pub fn to_text(&self) -> String {
        format!(
            "dim={}\nsteps={}\nseeds={}\ndata={}\nendian=little\ncrc32={:08x}\n",
            self.dim,
            self.steps,
            self.seeds,
            self.data.display(),
            self.crc32
        )
    }

    pub fn parse(text: &str) -> Result<Self> {
        let (mut dim, mut steps, mut seeds, mut data, mut endian, mut crc) = (None, None, None, None, None, None);
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) =
                line.split_once('=').ok_or_else(|| Error::Manifest(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let int = |v: &str| {
                v.parse::<usize>().map_err(|_| Error::Manifest(format!("line {}: `{key}` is not an integer", n + 1)))
            };
            let slot_taken = match key {
                "dim" => dim.replace(int(value)?).is_some(),
                "steps" => steps.replace(int(value)?).is_some(),
                "seeds" => seeds.replace(int(value)?).is_some(),
                "data" => data.replace(PathBuf::from(value)).is_some(),
                "endian" => endian.replace(value.to_string()).is_some(),
                "crc32" => {
                    let v = u32::from_str_radix(value, 16)
                        .map_err(|_| Error::Manifest(format!("line {}: bad crc32 `{value}`", n + 1)))?;
                    crc.replace(v).is_some()
                }
                other => return Err(Error::Manifest(format!("unknown key `{other}`"))),
            };
            if slot_taken {
                return Err(Error::Manifest(format!("duplicate key `{key}`")));
            }
        }
        let missing = |k: &str| Error::Manifest(format!("missing key `{k}`"));
        match endian.as_deref() {
            Some("little") => {}
            Some(other) => return Err(Error::Manifest(format!("unsupported endianness `{other}`"))),
            None => return Err(missing("endian")),
        }
        Ok(Self {
            dim: dim.ok_or_else(|| missing("dim"))?,
            steps: steps.ok_or_else(|| missing("steps"))?,
            seeds: seeds.ok_or_else(|| missing("seeds"))?,
            data: data.ok_or_else(|| missing("data"))?,
            crc32: crc.ok_or_else(|| missing("crc32"))?,
        })
    }
}

/// In-memory trace of `seeds x steps` noise predictions of length `dim`.
///
/// Values are held at full precision; [`write_trace`] rounds them to `f32`, so
/// `read_trace(write_trace(A)) == A` bit-exactly whenever `A` holds
/// `f32`-representable values (in particular for anything read from disk).
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    dim: usize,
    steps: usize,
    seeds: usize,
    values: Vec<f64>,
}

impl Trace {
    pub fn new(dim: usize, steps: usize, seeds: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || steps == 0 {
            return Err(Error::InvalidDenoiser("trace needs dim > 0 and steps > 0".into()));
        }
        if values.len() != seeds * steps * dim {
            return Err(Error::InvalidDenoiser(format!(
                "trace holds {} values, shape needs {}",
                values.len(),
                seeds * steps * dim
            )));
        }
        Ok(Self { dim, steps, seeds, values })
    }

    /// Builds a trace from per-seed predictions ordered first call to last.
    pub fn from_calls(dim: usize, per_seed: &[Vec<Vec<f64>>]) -> Result<Self> {
        let steps = per_seed.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(per_seed.len() * steps * dim);
        for calls in per_seed {
            if calls.len() != steps {
                return Err(Error::InvalidDenoiser("seeds recorded different step counts".into()));
            }
            for eps in calls {
                if eps.len() != dim {
                    return Err(Error::DimensionMismatch { expected: dim, got: eps.len() });
                }
                values.extend_from_slice(eps);
            }
        }
        Self::new(dim, steps, per_seed.len(), values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn seeds(&self) -> usize {
        self.seeds
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Prediction for `seed` when `step` iterations remain (`1..=steps`).
    pub fn get(&self, seed: usize, step: usize) -> Option<&[f64]> {
        if seed >= self.seeds || step == 0 || step > self.steps {
            return None;
        }
        let start = ((seed * self.steps) + (self.steps - step)) * self.dim;
        Some(&self.values[start..start + self.dim])
    }

    fn to_bytes(&self) -> Vec<u8> {
        self.values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
    }

    /// Replays `seed` on a descending timestep grid with `steps + 1` entries.
    pub fn replay<'a>(&'a self, seed: usize, grid: &'a [usize]) -> TraceReplay<'a> {
        TraceReplay { trace: self, seed, grid }
    }
}

/// Writes `trace` to `<manifest dir>/<data_name>` and the manifest to `manifest_path`.
pub fn write_trace(manifest_path: &Path, data_name: &str, trace: &Trace) -> Result<TraceManifest> {
    let bytes = trace.to_bytes();
    let manifest = TraceManifest {
        dim: trace.dim,
        steps: trace.steps,
        seeds: trace.seeds,
        data: PathBuf::from(data_name),
        crc32: crc32fast::hash(&bytes),
    };
    let data_path = resolve_data(manifest_path, &manifest.data);
    fs::write(&data_path, &bytes).map_err(|e| Error::io(&data_path, e))?;
    fs::write(manifest_path, manifest.to_text()).map_err(|e| Error::io(manifest_path, e))?;
    Ok(manifest)
}

/// Loads a whole trace into memory, checking length and checksum.
pub fn read_trace(manifest_path: &Path) -> Result<Trace> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest = TraceManifest::parse(&text)?;
    let data_path = resolve_data(manifest_path, &manifest.data);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = manifest.data_len_bytes();
    if bytes.len() as u64 != expected {
        return Err(Error::TruncatedTrace { path: data_path, expected, actual: bytes.len() as u64 });
    }
    let actual = crc32fast::hash(&bytes);
    if actual != manifest.crc32 {
        return Err(Error::ChecksumMismatch { expected: manifest.crc32, actual });
    }
    let values = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    if manifest.seeds == 0 {
        return Ok(Trace { dim: manifest.dim, steps: manifest.steps, seeds: 0, values });
    }
    Trace::new(manifest.dim, manifest.steps, manifest.seeds, values).map_err(|e| Error::Manifest(e.to_string()))
}

fn resolve_data(manifest_path: &Path, data: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(dir) if data.is_relative() => dir.join(data),
        _ => data.to_path_buf(),
    }
}

/// A [`Denoiser`] answering from a recorded trace.
///
/// The query timestep is located in the sampling grid; the call at grid
/// position `p` reads trace step `steps - p`.
#[derive(Debug, Clone, Copy)]
pub struct TraceReplay<'a> {
    trace: &'a Trace,
    seed: usize,
    grid: &'a [usize],
}

impl Denoiser for TraceReplay<'_> {
    fn dim(&self) -> usize {
        self.trace.dim
    }

    fn epsilon(&self, x: &[f64], t: usize, _schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        if x.len() != self.trace.dim {
            return Err(Error::DimensionMismatch { expected: self.trace.dim, got: x.len() });
        }
        if !all_finite(x) {
            return Err(Error::NonFinite("denoiser input"));
        }
        let miss = Error::TraceExhausted { seed: self.seed, t };
        let position = self.grid.iter().position(|&g| g == t).ok_or(miss)?;
        let step = self.trace.steps.checked_sub(position).filter(|s| *s > 0);
        let row =
            step.and_then(|s| self.trace.get(self.seed, s)).ok_or(Error::TraceExhausted { seed: self.seed, t })?;
        Ok(row.to_vec())
    }
}
