//! Command-line surface: picture discovery, 3D inversion, rendering and
//! statistical comparison of run populations.
//!
//! Every run owns one output directory and finishes by writing
//! `manifest.json`. A directory that already holds a manifest is refused,
//! so experiment trees only ever grow.

use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command as Process;
use std::str::FromStr;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmaes::write_cma_trace;
use crate::error::Error;
use crate::evolve::{search_with, SearchConfig, SearchError, SearchOutcome, StageSummary};
use crate::model::{Dim, Model};
use crate::objective::{
    Evaluator, ExternalForward, FieldData, ForwardModel, MeshDims, ResponseData, SyntheticForward,
    DEFAULT_ABSOLUTE_NOISE, DEFAULT_RELATIVE_NOISE,
};
use crate::raster::{rasterize_2d, sample_mesh, Image2D};
use crate::stats::{rank_sum, PMethod};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MODEL_FILE: &str = "model.json";
pub const TRACE_FILE: &str = "trace.csv";
pub const CMA_TRACE_FILE: &str = "cma_trace.csv";
pub const RECONSTRUCTION_FILE: &str = "reconstruction.pgm";
pub const MESH_OUT_FILE: &str = "mesh.txt";
pub const EXCHANGE_DIR: &str = "exchange";

/// Process exit codes, one per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Config = 2,
    Io = 3,
    Forward = 4,
    Format = 5,
    RunExists = 6,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{}: already holds a manifest; run directories are never overwritten", .0.display())]
    RunExists(PathBuf),
    #[error("{}: no manifests found", .0.display())]
    NoManifests(PathBuf),
    #[error("{failed} of {total} runs failed")]
    Jobs {
        failed: usize,
        total: usize,
        code: i32,
    },
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        CliError::Core(e.source)
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => {
                (match e {
                    Error::Config(_) | Error::Dimension(_) => ExitCode::Config,
                    Error::Io { .. } => ExitCode::Io,
                    Error::Forward(_) => ExitCode::Forward,
                    Error::Format(_) | Error::Structural { .. } => ExitCode::Format,
                }) as i32
            }
            CliError::RunExists(_) => ExitCode::RunExists as i32,
            CliError::NoManifests(_) => ExitCode::Io as i32,
            CliError::Jobs { code, .. } => *code,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Response-generation settings of the built-in synthetic forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSettings {
    pub station_stride: usize,
    pub decay_rates: Vec<f64>,
}

impl Default for SyntheticSettings {
    fn default() -> Self {
        let d = SyntheticForward::new(MeshDims {
            nx: 1,
            ny: 1,
            nz: 1,
        });
        SyntheticSettings {
            station_stride: d.station_stride,
            decay_rates: d.decay_rates,
        }
    }
}

/// Everything a run needs besides its input file, as one JSON document.
/// Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub search: SearchConfig,
    pub mesh: MeshDims,
    pub synthetic: SyntheticSettings,
    /// Seconds an external forward call may take.
    pub forward_timeout_seconds: Option<f64>,
    /// Final error reported as reached or missed in the manifest.
    pub error_threshold: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            search: SearchConfig::default(),
            mesh: MeshDims {
                nx: 13,
                ny: 14,
                nz: 10,
            },
            synthetic: SyntheticSettings::default(),
            forward_timeout_seconds: None,
            error_threshold: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> crate::Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> crate::Result<()> {
        self.search.validate()?;
        if self.mesh.cells() == 0 {
            return Err(Error::Config("mesh dimensions must be positive".into()));
        }
        if let Some(t) = self.forward_timeout_seconds {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config("forward timeout must be positive".into()));
            }
        }
        self.synthetic_forward().validate()
    }

    pub fn synthetic_forward(&self) -> SyntheticForward {
        SyntheticForward {
            dims: self.mesh,
            station_stride: self.synthetic.station_stride,
            decay_rates: self.synthetic.decay_rates.clone(),
        }
    }
}

/// Which forward model scores 3D candidates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardSpec {
    Synthetic,
    /// External solver command run through the file exchange protocol.
    Exec(String),
}

impl FromStr for ForwardSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.split_once(':') {
            _ if s == "synthetic" => Ok(ForwardSpec::Synthetic),
            Some(("exec", cmd)) if !cmd.trim().is_empty() => Ok(ForwardSpec::Exec(cmd.into())),
            _ => Err(format!(
                "expected `synthetic` or `exec:<command>`, got `{s}`"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProblemDescriptor {
    Picture {
        source: PathBuf,
        width: usize,
        height: usize,
    },
    Mesh {
        source: PathBuf,
        dims: MeshDims,
        data_len: usize,
        forward: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    pub problem: ProblemDescriptor,
    /// Output files, relative to the run directory.
    pub outputs: Vec<String>,
    pub stages: Vec<StageSummary>,
    pub final_error: f64,
    pub evaluations: u64,
    pub blobs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold_met: Option<bool>,
    pub wall_seconds: f64,
}

fn write_file(path: &Path, bytes: &[u8]) -> crate::Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn prepare_run_dir(out_dir: &Path) -> CliResult<()> {
    if out_dir.join(MANIFEST_FILE).exists() {
        return Err(CliError::RunExists(out_dir.to_path_buf()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    Ok(())
}

fn write_traces(out_dir: &Path, outcome: &SearchOutcome) -> crate::Result<()> {
    let mut trace = Vec::new();
    outcome
        .trace
        .write_csv(&mut trace)
        .expect("write to memory");
    write_file(&out_dir.join(TRACE_FILE), &trace)?;
    let mut cma = Vec::new();
    write_cma_trace(&mut cma, &outcome.trace.cma_rows).expect("write to memory");
    write_file(&out_dir.join(CMA_TRACE_FILE), &cma)
}

/// Keeps whatever was traced before a failed search.
fn salvage_trace(out_dir: &Path, err: &SearchError) {
    let mut trace = Vec::new();
    if err.trace.write_csv(&mut trace).is_ok() {
        let _ = fs::write(out_dir.join(TRACE_FILE), trace);
    }
}

fn finish(out_dir: &Path, manifest: &RunManifest) -> CliResult<()> {
    for name in &manifest.outputs {
        let p = out_dir.join(name);
        if !p.exists() {
            return Err(Error::io(&p, std::io::ErrorKind::NotFound.into()).into());
        }
    }
    let path = out_dir.join(MANIFEST_FILE);
    let mut file = match OpenOptions::new().write(true).create_new(true).open(&path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
            return Err(CliError::RunExists(out_dir.to_path_buf()))
        }
        Err(e) => return Err(Error::io(&path, e).into()),
    };
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(&path, e))?;
    Ok(())
}

fn threshold(config: &RunConfig, error: f64) -> Option<bool> {
    config.error_threshold.map(|t| error < t)
}

/// Fits a 2D model to a grayscale picture (PGM, or PNG by content).
pub fn cmd_discover(target: &Path, config: &RunConfig, out_dir: &Path) -> CliResult<RunManifest> {
    let t0 = Instant::now();
    config.validate()?;
    prepare_run_dir(out_dir)?;
    let image = Image2D::load(target)?;
    let (width, height) = (image.width, image.height);
    let problem = FieldData::Picture(image);
    let ev = Evaluator::picture(&problem)?;
    let outcome = search_with(&ev, &config.search).inspect_err(|e| salvage_trace(out_dir, e))?;

    write_file(
        &out_dir.join(MODEL_FILE),
        outcome.model.to_json().as_bytes(),
    )?;
    let recon = rasterize_2d(&outcome.model, width, height)?;
    write_file(&out_dir.join(RECONSTRUCTION_FILE), &recon.to_pgm())?;
    write_traces(out_dir, &outcome)?;

    let manifest = RunManifest {
        command: "discover".into(),
        seed: config.search.seed,
        config: config.clone(),
        problem: ProblemDescriptor::Picture {
            source: target.to_path_buf(),
            width,
            height,
        },
        outputs: [MODEL_FILE, RECONSTRUCTION_FILE, TRACE_FILE, CMA_TRACE_FILE]
            .map(String::from)
            .to_vec(),
        stages: outcome.trace.stages.clone(),
        final_error: outcome.error,
        evaluations: outcome.evaluations,
        blobs: outcome.model.len(),
        threshold_met: threshold(config, outcome.error),
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    finish(out_dir, &manifest)?;
    Ok(manifest)
}

/// Fits a 3D model to response data through the chosen forward model.
pub fn cmd_invert3d(
    data_path: &Path,
    forward: &ForwardSpec,
    config: &RunConfig,
    out_dir: &Path,
) -> CliResult<RunManifest> {
    let t0 = Instant::now();
    config.validate()?;
    prepare_run_dir(out_dir)?;
    let text = fs::read_to_string(data_path).map_err(|e| Error::io(data_path, e))?;
    let data = ResponseData::from_text(&text)?;
    let data_len = data.values.len();
    let dims = config.mesh;

    let synthetic;
    let external;
    let (model_ref, label): (&dyn ForwardModel, String) = match forward {
        ForwardSpec::Synthetic => {
            synthetic = config.synthetic_forward();
            (&synthetic, "synthetic".into())
        }
        ForwardSpec::Exec(cmd) => {
            let timeout = config.forward_timeout_seconds.map(Duration::from_secs_f64);
            external = ExternalForward::new(out_dir.join(EXCHANGE_DIR), cmd, data_len, timeout)?;
            (&external, format!("exec:{cmd}"))
        }
    };
    let problem = FieldData::Mesh { dims, data };
    let ev = Evaluator::new(&problem, Some(model_ref))?;
    let outcome = search_with(&ev, &config.search).inspect_err(|e| salvage_trace(out_dir, e))?;

    write_file(
        &out_dir.join(MODEL_FILE),
        outcome.model.to_json().as_bytes(),
    )?;
    let mesh = sample_mesh(&outcome.model, dims.nx, dims.ny, dims.nz)?;
    mesh.save(&out_dir.join(MESH_OUT_FILE))?;
    write_traces(out_dir, &outcome)?;

    let manifest = RunManifest {
        command: "invert3d".into(),
        seed: config.search.seed,
        config: config.clone(),
        problem: ProblemDescriptor::Mesh {
            source: data_path.to_path_buf(),
            dims,
            data_len,
            forward: label,
        },
        outputs: [MODEL_FILE, MESH_OUT_FILE, TRACE_FILE, CMA_TRACE_FILE]
            .map(String::from)
            .to_vec(),
        stages: outcome.trace.stages.clone(),
        final_error: outcome.error,
        evaluations: outcome.evaluations,
        blobs: outcome.model.len(),
        threshold_met: threshold(config, outcome.error),
        wall_seconds: t0.elapsed().as_secs_f64(),
    };
    finish(out_dir, &manifest)?;
    Ok(manifest)
}

/// Raster size for rendering: `WxH` for pictures, `NXxNYxNZ` for meshes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RenderDims {
    Picture { width: usize, height: usize },
    Mesh(MeshDims),
}

impl FromStr for RenderDims {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<usize> = s
            .split('x')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| format!("expected WxH or NXxNYxNZ, got `{s}`"))?;
        if parts.contains(&0) {
            return Err("dimensions must be positive".into());
        }
        match parts[..] {
            [width, height] => Ok(RenderDims::Picture { width, height }),
            [nx, ny, nz] => Ok(RenderDims::Mesh(MeshDims { nx, ny, nz })),
            _ => Err(format!("expected WxH or NXxNYxNZ, got `{s}`")),
        }
    }
}

/// Slice file name for depth layer `k`.
pub fn slice_name(k: usize) -> String {
    format!("slice_{k:03}.pgm")
}

/// Renders a model file. A 2D model becomes one image at `out_path`
/// (PNG if the extension says so, PGM otherwise). A 3D model becomes a
/// directory holding the mesh text file and one PGM per depth layer.
/// Returns the written files.
pub fn cmd_render(model_path: &Path, out_path: &Path, dims: RenderDims) -> CliResult<Vec<PathBuf>> {
    let text = fs::read_to_string(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = Model::from_json(&text)?;
    match (model.dim, dims) {
        (Dim::Two, RenderDims::Picture { width, height }) => {
            rasterize_2d(&model, width, height)?.save(out_path)?;
            Ok(vec![out_path.to_path_buf()])
        }
        (Dim::Three, RenderDims::Mesh(d)) => {
            fs::create_dir_all(out_path).map_err(|e| Error::io(out_path, e))?;
            let mesh = sample_mesh(&model, d.nx, d.ny, d.nz)?;
            let mut written = vec![out_path.join(MESH_OUT_FILE)];
            mesh.save(&written[0])?;
            for (k, slice) in mesh.slices().iter().enumerate() {
                let p = out_path.join(slice_name(k));
                write_file(&p, &slice.to_pgm())?;
                written.push(p);
            }
            Ok(written)
        }
        (dim, _) => Err(Error::Config(format!(
            "a {}D model needs {} render dimensions",
            dim.as_usize(),
            if dim == Dim::Two { "WxH" } else { "NXxNYxNZ" }
        ))
        .into()),
    }
}

/// Synthetic responses of a 3D model with the default noise floor, in the
/// response data format.
pub fn cmd_synth(model_path: &Path, config: &RunConfig, out_path: &Path) -> CliResult<usize> {
    config.validate()?;
    let text = fs::read_to_string(model_path).map_err(|e| Error::io(model_path, e))?;
    let model = Model::from_json(&text)?;
    let d = config.mesh;
    let mesh = sample_mesh(&model, d.nx, d.ny, d.nz)?;
    let values = config.synthetic_forward().forward(&mesh);
    let data =
        ResponseData::with_noise_floor(values, DEFAULT_RELATIVE_NOISE, DEFAULT_ABSOLUTE_NOISE)?;
    write_file(out_path, data.to_text().as_bytes())?;
    Ok(data.values.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleSummary {
    pub label: String,
    pub errors: Vec<f64>,
    pub best: f64,
    pub worst: f64,
    pub mean: f64,
}

impl SampleSummary {
    pub fn new(label: String, errors: Vec<f64>) -> Self {
        let best = errors.iter().copied().fold(f64::INFINITY, f64::min);
        let worst = errors.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = errors.iter().sum::<f64>() / errors.len() as f64;
        SampleSummary {
            label,
            errors,
            best,
            worst,
            mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub a: SampleSummary,
    pub b: SampleSummary,
    /// Rank sum of sample `a`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: PMethod,
}

impl ComparisonReport {
    pub fn from_samples(a: SampleSummary, b: SampleSummary) -> crate::Result<Self> {
        let test = rank_sum(&a.errors, &b.errors)?;
        Ok(ComparisonReport {
            a,
            b,
            statistic: test.statistic,
            p_value: test.p_value,
            method: test.method,
        })
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:>4} {:>12} {:>12} {:>12}\n",
            "sample", "n", "best", "worst", "mean"
        );
        for s in [&self.a, &self.b] {
            out += &format!(
                "{:<24} {:>4} {:>12.6} {:>12.6} {:>12.6}\n",
                s.label,
                s.errors.len(),
                s.best,
                s.worst,
                s.mean
            );
        }
        let method = match self.method {
            PMethod::Exact => "exact",
            PMethod::Normal => "normal approximation",
        };
        out += &format!(
            "rank sum W = {}, two-sided p = {:.6} ({method})\n",
            self.statistic, self.p_value
        );
        out
    }
}

/// Every manifest below `dir`, sorted by path.
pub fn find_manifests(dir: &Path) -> crate::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut pending = vec![dir.to_path_buf()];
    while let Some(d) = pending.pop() {
        let entries = fs::read_dir(&d).map_err(|e| Error::io(&d, e))?;
        for entry in entries {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                pending.push(path);
            } else if path.file_name().is_some_and(|n| n == MANIFEST_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

fn final_error(path: &Path) -> crate::Result<f64> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    value
        .get("final_error")
        .and_then(serde_json::Value::as_f64)
        .ok_or_else(|| Error::Format(format!("{}: no numeric final_error", path.display())))
}

fn collect_sample(dir: &Path) -> CliResult<SampleSummary> {
    let manifests = find_manifests(dir)?;
    if manifests.is_empty() {
        return Err(CliError::NoManifests(dir.to_path_buf()));
    }
    let errors = manifests
        .iter()
        .map(|p| final_error(p))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(SampleSummary::new(dir.display().to_string(), errors))
}

/// Compares the final errors of two run populations.
pub fn cmd_compare(runs_a: &Path, runs_b: &Path) -> CliResult<ComparisonReport> {
    let a = collect_sample(runs_a)?;
    let b = collect_sample(runs_b)?;
    Ok(ComparisonReport::from_samples(a, b)?)
}

#[derive(Debug, Parser)]
#[command(
    name = "cellsplit",
    version,
    about = "Blob-model inversion by priming, CMA-ES and cell-division splitting"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a 2D blob model to a grayscale picture.
    Discover(DiscoverArgs),
    /// Fit a 3D blob model to response data.
    Invert3d(Invert3dArgs),
    /// Render a model file to an image or a mesh slice stack.
    Render(RenderArgs),
    /// Compare final errors of two run directories with a rank-sum test.
    Compare(CompareArgs),
    /// Write synthetic response data for a 3D model.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// JSON run configuration; defaults apply to missing keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory (or parent directory with --jobs above 1).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub split_count: Option<usize>,
    /// Total evaluation budget.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Independent runs launched as separate processes, seeded
    /// seed, seed+1, ... into run-000, run-001, ...
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

impl RunArgs {
    fn config(&self) -> crate::Result<RunConfig> {
        let mut config = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let s = &mut config.search;
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        if let Some(r) = self.rounds {
            s.num_rounds = r;
        }
        if let Some(c) = self.split_count {
            s.split_count = c;
        }
        if let Some(b) = self.budget {
            s.evaluation_budget = Some(b);
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct DiscoverArgs {
    /// Target picture (PGM or PNG).
    pub target: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct Invert3dArgs {
    /// Response data: one `value [sigma]` per line.
    pub data: PathBuf,
    /// `synthetic` or `exec:<command>`.
    #[arg(long, default_value = "synthetic")]
    pub forward: ForwardSpec,
    /// Seconds allowed per external forward call.
    #[arg(long)]
    pub timeout: Option<f64>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// `WxH` for 2D models, `NXxNYxNZ` for 3D models.
    #[arg(long)]
    pub dims: RenderDims,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    pub runs_a: PathBuf,
    pub runs_b: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    pub model: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Drops the given flags and their values from an argument list.
fn strip_flags(args: &[OsString], flags: &[&str]) -> Vec<OsString> {
    let mut out = Vec::new();
    let mut skip = false;
    for a in args {
        if skip {
            skip = false;
            continue;
        }
        let s = a.to_string_lossy();
        if flags.contains(&s.as_ref()) {
            skip = true;
        } else if !flags.iter().any(|f| s.starts_with(&format!("{f}="))) {
            out.push(a.clone());
        }
    }
    out
}

/// Run directory of job `i` under a parent directory.
pub fn job_dir(parent: &Path, i: usize) -> PathBuf {
    parent.join(format!("run-{i:03}"))
}

/// Relaunches this executable once per job and waits for all of them.
fn launch_jobs(raw: &[OsString], run: &RunArgs, base_seed: u64) -> CliResult<()> {
    fs::create_dir_all(&run.out).map_err(|e| Error::io(&run.out, e))?;
    let exe = std::env::current_exe().map_err(|e| Error::io("current executable", e))?;
    let rest = strip_flags(&raw[1..], &["--jobs", "--out", "--seed"]);
    let mut children = Vec::with_capacity(run.jobs);
    for i in 0..run.jobs {
        let child = Process::new(&exe)
            .args(&rest)
            .arg("--out")
            .arg(job_dir(&run.out, i))
            .arg("--seed")
            .arg((base_seed.wrapping_add(i as u64)).to_string())
            .spawn()
            .map_err(|e| Error::io(&exe, e))?;
        children.push(child);
    }
    let mut failed = 0;
    let mut code = 0;
    for mut child in children {
        let status = child.wait().map_err(|e| Error::io(&exe, e))?;
        if !status.success() {
            failed += 1;
            if code == 0 {
                code = status.code().unwrap_or(1);
            }
        }
    }
    if failed > 0 {
        return Err(CliError::Jobs {
            failed,
            total: run.jobs,
            code,
        });
    }
    Ok(())
}

fn dispatch(cli: Cli, raw: &[OsString]) -> CliResult<()> {
    match cli.command {
        Command::Discover(a) => {
            let config = a.run.config()?;
            if a.run.jobs > 1 {
                return launch_jobs(raw, &a.run, config.search.seed);
            }
            let m = cmd_discover(&a.target, &config, &a.run.out)?;
            println!(
                "final error {} after {} evaluations, {} blobs",
                m.final_error, m.evaluations, m.blobs
            );
        }
        Command::Invert3d(a) => {
            let mut config = a.run.config()?;
            if let Some(t) = a.timeout {
                config.forward_timeout_seconds = Some(t);
                config.validate()?;
            }
            if a.run.jobs > 1 {
                return launch_jobs(raw, &a.run, config.search.seed);
            }
            let m = cmd_invert3d(&a.data, &a.forward, &config, &a.run.out)?;
            println!(
                "final rms {} after {} evaluations, {} blobs",
                m.final_error, m.evaluations, m.blobs
            );
        }
        Command::Render(a) => {
            for p in cmd_render(&a.model, &a.out, a.dims)? {
                println!("{}", p.display());
            }
        }
        Command::Compare(a) => {
            let report = cmd_compare(&a.runs_a, &a.runs_b)?;
            print!("{}", report.to_table());
            if let Some(p) = a.json {
                let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
                text.push('\n');
                write_file(&p, text.as_bytes())?;
            }
        }
        Command::Synth(a) => {
            let config = match &a.config {
                Some(p) => RunConfig::load(p)?,
                None => RunConfig::default(),
            };
            let n = cmd_synth(&a.model, &config, &a.out)?;
            println!("{n} responses written to {}", a.out.display());
        }
    }
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run(args: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::Config as i32
            } else {
                0
            };
        }
    };
    match dispatch(cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            let mut shown = e.to_string();
            eprintln!("error: {shown}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                let msg = s.to_string();
                // most wrappers already quote their cause
                if !shown.contains(&msg) {
                    eprintln!("  caused by: {msg}");
                    shown = msg;
                }
                source = s.source();
            }
            e.exit_code()
        }
    }
}
