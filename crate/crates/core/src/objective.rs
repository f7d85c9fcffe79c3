//! Error evaluation: pixel error for picture discovery, normalized RMS for
//! mesh problems, and the forward-model protocol that mesh problems use.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::error::{Error, ForwardError, Result};
use crate::model::{Dim, Model};
use crate::raster::{rasterize_2d, sample_mesh, Image2D, Mesh3D};

/// Relative part of the default data noise floor.
pub const DEFAULT_RELATIVE_NOISE: f64 = 0.05;
/// Absolute part of the default data noise floor.
pub const DEFAULT_ABSOLUTE_NOISE: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeshDims {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl MeshDims {
    pub fn cells(&self) -> usize {
        self.nx * self.ny * self.nz
    }
}

/// Observed responses with their per-datum standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseData {
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
}

impl ResponseData {
    pub fn new(values: Vec<f64>, std_errors: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Format("response data is empty".into()));
        }
        if values.len() != std_errors.len() {
            return Err(Error::Structural {
                what: "standard errors",
                expected: values.len(),
                actual: std_errors.len(),
            });
        }
        if let Some(bad) = std_errors.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Format(format!(
                "standard errors must be positive, found {bad}"
            )));
        }
        Ok(ResponseData { values, std_errors })
    }

    /// σ_i = relative·|d_i| + absolute.
    pub fn with_noise_floor(values: Vec<f64>, relative: f64, absolute: f64) -> Result<Self> {
        let std_errors = values
            .iter()
            .map(|d| relative * d.abs() + absolute)
            .collect();
        ResponseData::new(values, std_errors)
    }

    /// One datum per line: `value [sigma]`. Missing sigmas use the default
    /// noise floor. `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut values = Vec::new();
        let mut sigmas = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<f64> = line
                .split_ascii_whitespace()
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("data line {}: `{line}`", n + 1)))?;
            match fields[..] {
                [d] => {
                    values.push(d);
                    sigmas.push(DEFAULT_RELATIVE_NOISE * d.abs() + DEFAULT_ABSOLUTE_NOISE);
                }
                [d, s] => {
                    values.push(d);
                    sigmas.push(s);
                }
                _ => {
                    return Err(Error::Format(format!(
                        "data line {}: expected `value [sigma]`",
                        n + 1
                    )))
                }
            }
        }
        ResponseData::new(values, sigmas)
    }

    pub fn to_text(&self) -> String {
        self.values
            .iter()
            .zip(&self.std_errors)
            .map(|(d, s)| format!("{d:e} {s:e}\n"))
            .collect()
    }
}

/// What a candidate model is scored against.
#[derive(Debug, Clone, PartialEq)]
pub enum FieldData {
    Picture(Image2D),
    Mesh { dims: MeshDims, data: ResponseData },
}

impl FieldData {
    pub fn dim(&self) -> Dim {
        match self {
            FieldData::Picture(_) => Dim::Two,
            FieldData::Mesh { .. } => Dim::Three,
        }
    }
}

/// A simulator mapping a resistivity mesh to predicted responses.
///
/// Implementations must be deterministic and always return
/// `response_len()` values.
pub trait ForwardModel: Send + Sync {
    fn respond(&self, mesh: &Mesh3D) -> Result<Vec<f64>, ForwardError>;
    fn response_len(&self) -> usize;
}

/// Mean absolute pixel difference, in intensity levels.
pub fn picture_error(candidate: &Image2D, target: &Image2D) -> Result<f64> {
    if candidate.width != target.width || candidate.height != target.height {
        return Err(Error::Dimension(format!(
            "candidate is {}x{}, target is {}x{}",
            candidate.width, candidate.height, target.width, target.height
        )));
    }
    let total: u64 = candidate
        .pixels
        .iter()
        .zip(&target.pixels)
        .map(|(&a, &b)| a.abs_diff(b) as u64)
        .sum();
    Ok(total as f64 / candidate.pixels.len() as f64)
}

/// `sqrt(mean(((r_i − d_i) / σ_i)²))`.
pub fn rms_error(response: &[f64], data: &ResponseData) -> Result<f64> {
    if response.len() != data.values.len() {
        return Err(Error::Structural {
            what: "response",
            expected: data.values.len(),
            actual: response.len(),
        });
    }
    let sum: f64 = response
        .iter()
        .zip(&data.values)
        .zip(&data.std_errors)
        .map(|((r, d), s)| ((r - d) / s).powi(2))
        .sum();
    Ok((sum / response.len() as f64).sqrt())
}

/// Scores models against a problem and counts every evaluation.
///
/// Shared by every search stage so that priming probes, culling, splitting
/// and CMA-ES all draw on one evaluation count.
pub struct Evaluator<'a> {
    problem: &'a FieldData,
    forward: Option<&'a dyn ForwardModel>,
    count: AtomicU64,
}

impl<'a> Evaluator<'a> {
    pub fn new(problem: &'a FieldData, forward: Option<&'a dyn ForwardModel>) -> Result<Self> {
        match (problem, forward) {
            (FieldData::Mesh { data, .. }, Some(f)) if f.response_len() != data.values.len() => {
                Err(Error::Structural {
                    what: "forward response length",
                    expected: data.values.len(),
                    actual: f.response_len(),
                })
            }
            (FieldData::Mesh { .. }, None) => {
                Err(Error::Config("mesh problems need a forward model".into()))
            }
            _ => Ok(Evaluator {
                problem,
                forward,
                count: AtomicU64::new(0),
            }),
        }
    }

    pub fn picture(problem: &'a FieldData) -> Result<Self> {
        Evaluator::new(problem, None)
    }

    pub fn problem(&self) -> &FieldData {
        self.problem
    }

    pub fn evaluations(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }

    pub fn evaluate(&self, model: &Model) -> Result<f64> {
        self.count.fetch_add(1, Ordering::Relaxed);
        match self.problem {
            FieldData::Picture(target) => {
                let img = rasterize_2d(model, target.width, target.height)?;
                picture_error(&img, target)
            }
            FieldData::Mesh { dims, data } => {
                let mesh = sample_mesh(model, dims.nx, dims.ny, dims.nz)?;
                let forward = self.forward.expect("checked at construction");
                let response = forward.respond(&mesh).map_err(|e| match e {
                    ForwardError::ShortResponse { expected, actual } => Error::Structural {
                        what: "forward response",
                        expected,
                        actual,
                    },
                    other => Error::Forward(other),
                })?;
                rms_error(&response, data)
            }
        }
    }
}

/// Desk-scale stand-in for an MT solver.
///
/// Each station sits on a surface cell column. For every depth profile with
/// decay rate `r`, the station response is the mean of log10(resistivity)
/// over the station column and its 8 neighbours (clipped at the mesh edge),
/// with depth layer `k` weighted by `r^k`. Smaller rates sense shallower.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticForward {
    pub dims: MeshDims,
    /// Station spacing in cells along x and y.
    #[serde(default = "default_stride")]
    pub station_stride: usize,
    /// Geometric depth-decay rate per profile, each in (0, 1].
    #[serde(default = "default_rates")]
    pub decay_rates: Vec<f64>,
}

fn default_stride() -> usize {
    1
}

fn default_rates() -> Vec<f64> {
    vec![0.3, 0.5, 0.7, 0.85, 0.95]
}

impl SyntheticForward {
    pub fn new(dims: MeshDims) -> Self {
        SyntheticForward {
            dims,
            station_stride: default_stride(),
            decay_rates: default_rates(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.station_stride == 0 {
            return Err(Error::Config("station_stride must be positive".into()));
        }
        if self.decay_rates.is_empty() || self.decay_rates.iter().any(|r| !(*r > 0.0 && *r <= 1.0))
        {
            return Err(Error::Config("decay rates must lie in (0, 1]".into()));
        }
        Ok(())
    }

    fn stations(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let s = self.station_stride.max(1);
        (0..self.dims.ny)
            .step_by(s)
            .flat_map(move |j| (0..self.dims.nx).step_by(s).map(move |i| (i, j)))
    }

    /// Responses ordered station-major (y then x), then by profile.
    pub fn forward(&self, mesh: &Mesh3D) -> Vec<f64> {
        let (nx, ny, nz) = (mesh.nx, mesh.ny, mesh.nz);
        let logs: Vec<f64> = mesh.values.iter().map(|r| r.log10()).collect();
        let mut out = Vec::with_capacity(self.response_len());
        // Per profile: weighted column sums, then neighbourhood means.
        let mut column = vec![0.0; nx * ny];
        let mut per_profile = Vec::with_capacity(self.decay_rates.len());
        for &rate in &self.decay_rates {
            let weights: Vec<f64> = (0..nz).map(|k| rate.powi(k as i32)).collect();
            let wsum: f64 = weights.iter().sum();
            column.iter_mut().for_each(|c| *c = 0.0);
            for (k, w) in weights.iter().enumerate() {
                let layer = &logs[k * nx * ny..(k + 1) * nx * ny];
                for (c, l) in column.iter_mut().zip(layer) {
                    *c += w * l;
                }
            }
            per_profile.push((column.clone(), wsum));
        }
        for (i, j) in self.stations() {
            for (col, wsum) in &per_profile {
                let mut total = 0.0;
                let mut n = 0usize;
                for jj in j.saturating_sub(1)..=(j + 1).min(ny - 1) {
                    for ii in i.saturating_sub(1)..=(i + 1).min(nx - 1) {
                        total += col[jj * nx + ii];
                        n += 1;
                    }
                }
                out.push(total / (n as f64 * wsum));
            }
        }
        out
    }
}

impl ForwardModel for SyntheticForward {
    fn respond(&self, mesh: &Mesh3D) -> Result<Vec<f64>, ForwardError> {
        if (mesh.nx, mesh.ny, mesh.nz) != (self.dims.nx, self.dims.ny, self.dims.nz) {
            return Err(ForwardError::BadResponse(format!(
                "mesh is {}x{}x{}, forward expects {}x{}x{}",
                mesh.nx, mesh.ny, mesh.nz, self.dims.nx, self.dims.ny, self.dims.nz
            )));
        }
        Ok(self.forward(mesh))
    }

    fn response_len(&self) -> usize {
        self.stations().count() * self.decay_rates.len()
    }
}

/// Runs an external solver through files in an exchange directory.
///
/// Each call writes `mesh.txt`, runs the command with the exchange
/// directory as working directory and reads `response.txt` (one real per
/// line). If the command writes `status.txt` its first line must start
/// with `OK`; `FAIL <message>` is reported as a solver failure. Calls are
/// serialized on the directory.
pub struct ExternalForward {
    exchange_dir: PathBuf,
    program: String,
    args: Vec<String>,
    response_len: usize,
    timeout: Option<Duration>,
    lock: Mutex<()>,
}

pub const MESH_FILE: &str = "mesh.txt";
pub const RESPONSE_FILE: &str = "response.txt";
pub const STATUS_FILE: &str = "status.txt";

impl ExternalForward {
    /// `command` is split on whitespace into program and arguments.
    pub fn new(
        exchange_dir: impl Into<PathBuf>,
        command: &str,
        response_len: usize,
        timeout: Option<Duration>,
    ) -> Result<Self> {
        let mut parts = command.split_whitespace().map(str::to_owned);
        let program = parts
            .next()
            .ok_or_else(|| Error::Config("empty forward command".into()))?;
        let exchange_dir = exchange_dir.into();
        fs::create_dir_all(&exchange_dir).map_err(|e| Error::io(&exchange_dir, e))?;
        Ok(ExternalForward {
            exchange_dir,
            program,
            args: parts.collect(),
            response_len,
            timeout,
            lock: Mutex::new(()),
        })
    }

    pub fn exchange_dir(&self) -> &Path {
        &self.exchange_dir
    }

    fn command_line(&self) -> String {
        std::iter::once(self.program.as_str())
            .chain(self.args.iter().map(String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn run(&self, mesh: &Mesh3D) -> Result<Vec<f64>, ForwardError> {
        let dir = &self.exchange_dir;
        for stale in [RESPONSE_FILE, STATUS_FILE] {
            match fs::remove_file(dir.join(stale)) {
                Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(e.into()),
                _ => {}
            }
        }
        fs::write(dir.join(MESH_FILE), mesh.to_text())?;
        let stdout = fs::File::create(dir.join("stdout.log"))?;
        let stderr = fs::File::create(dir.join("stderr.log"))?;
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .current_dir(dir)
            .stdin(Stdio::null())
            .stdout(stdout)
            .stderr(stderr)
            .spawn()
            .map_err(|source| ForwardError::Spawn {
                command: self.command_line(),
                source,
            })?;
        let status = match self.timeout {
            Some(limit) => match child.wait_timeout(limit)? {
                Some(status) => status,
                None => {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(ForwardError::Timeout {
                        command: self.command_line(),
                        seconds: limit.as_secs_f64(),
                    });
                }
            },
            None => child.wait()?,
        };
        if !status.success() {
            let stderr = fs::read_to_string(dir.join("stderr.log")).unwrap_or_default();
            return Err(ForwardError::ExitStatus {
                command: self.command_line(),
                status: status.to_string(),
                stderr: stderr.trim().chars().take(2000).collect(),
            });
        }
        if let Ok(text) = fs::read_to_string(dir.join(STATUS_FILE)) {
            let line = text.lines().next().unwrap_or("").trim();
            if !line.starts_with("OK") {
                let msg = line.strip_prefix("FAIL").unwrap_or(line).trim();
                return Err(ForwardError::Reported(msg.to_owned()));
            }
        }
        let text = fs::read_to_string(dir.join(RESPONSE_FILE))
            .map_err(|e| ForwardError::BadResponse(format!("{RESPONSE_FILE}: {e}")))?;
        let values = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(|l| {
                l.parse::<f64>()
                    .map_err(|_| ForwardError::BadResponse(format!("not a number: `{l}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        if values.len() != self.response_len {
            return Err(ForwardError::ShortResponse {
                expected: self.response_len,
                actual: values.len(),
            });
        }
        Ok(values)
    }
}

impl ForwardModel for ExternalForward {
    fn respond(&self, mesh: &Mesh3D) -> Result<Vec<f64>, ForwardError> {
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        self.run(mesh)
    }

    fn response_len(&self) -> usize {
        self.response_len
    }
}
