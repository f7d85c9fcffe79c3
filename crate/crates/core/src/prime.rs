//! Greedy priming: scan a diffuse light and a diffuse dark probe across the
//! model, refine each by half-interval search, keep the better one if it
//! lowers the error, adjust the background, repeat.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Blob, Dim, Model};
use crate::objective::Evaluator;
use crate::raster::cell_center;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimeConfig {
    /// Probe positions per axis.
    pub scan_grid: usize,
    /// Initial semi-axis of probe blobs.
    pub probe_radius: f64,
    pub probe_alpha: f64,
    pub light_delta: f64,
    pub dark_delta: f64,
    pub probe_strength: f64,
    /// Cap on placed blobs; unset means 40 for pictures and 4 for meshes.
    pub max_blobs: Option<usize>,
    /// Priming stops placing and refining blobs once it has spent this many
    /// evaluations.
    pub max_evaluations: Option<u64>,
    pub refine_initial_step: f64,
    /// Refinement stops once the step falls below this.
    pub refine_min_step: f64,
    /// Upper bound on improving refinement cycles per blob.
    pub refine_max_cycles: usize,
}

impl Default for PrimeConfig {
    fn default() -> Self {
        PrimeConfig {
            scan_grid: 10,
            probe_radius: 0.15,
            probe_alpha: 0.2,
            light_delta: 0.9,
            dark_delta: 0.1,
            probe_strength: 1.0,
            max_blobs: None,
            max_evaluations: None,
            refine_initial_step: 0.25,
            refine_min_step: 1.0 / 512.0,
            refine_max_cycles: 1000,
        }
    }
}

pub const DEFAULT_MAX_BLOBS_2D: usize = 40;
pub const DEFAULT_MAX_BLOBS_3D: usize = 4;

impl PrimeConfig {
    pub fn blob_cap(&self, dim: Dim) -> usize {
        self.max_blobs.unwrap_or(match dim {
            Dim::Two => DEFAULT_MAX_BLOBS_2D,
            Dim::Three => DEFAULT_MAX_BLOBS_3D,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.scan_grid < 2 {
            return Err(Error::Config("scan_grid must be at least 2".into()));
        }
        if !(self.refine_min_step > 0.0 && self.refine_min_step < 1.0) {
            return Err(Error::Config("refine_min_step must lie in (0, 1)".into()));
        }
        if self.refine_initial_step.is_nan() || self.refine_initial_step <= 0.0 {
            return Err(Error::Config("refine_initial_step must be positive".into()));
        }
        for (name, v) in [
            ("probe_radius", self.probe_radius),
            ("probe_alpha", self.probe_alpha),
            ("light_delta", self.light_delta),
            ("dark_delta", self.dark_delta),
            ("probe_strength", self.probe_strength),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Light,
    Dark,
}

/// Log record for one accepted blob.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrimeEvent {
    pub blob_index: usize,
    pub polarity: Polarity,
    pub error_before: f64,
    pub error_after: f64,
    /// Evaluations since priming began, once the blob and the background
    /// were settled.
    pub evaluations: u64,
    /// Error after the background adjustment that followed.
    pub error_after_background: f64,
}

#[derive(Debug, Clone)]
pub struct PrimeOutcome {
    pub model: Model,
    pub error: f64,
    /// Error of the input model, before anything was adjusted.
    pub start_error: f64,
    pub events: Vec<PrimeEvent>,
    /// Evaluations spent by this priming run.
    pub evaluations: u64,
}

fn probe(model: &Model, polarity: Polarity, cfg: &PrimeConfig, pos: [f64; 3]) -> Blob {
    let delta = match polarity {
        Polarity::Light => cfg.light_delta,
        Polarity::Dark => cfg.dark_delta,
    };
    let (s, a, r) = (cfg.probe_strength, cfg.probe_alpha, cfg.probe_radius);
    match model.dim {
        Dim::Two => Blob::disc(delta, s, a, [pos[0], pos[1]], r),
        Dim::Three => Blob::ball(delta, s, a, pos, r),
    }
}

/// Grid positions in scan order: x fastest, then y, then z.
fn scan_positions(dim: Dim, grid: usize) -> Vec<[f64; 3]> {
    let zs = if dim == Dim::Three { grid } else { 1 };
    let mut out = Vec::with_capacity(grid * grid * zs);
    for k in 0..zs {
        for j in 0..grid {
            for i in 0..grid {
                let z = if dim == Dim::Three {
                    cell_center(k, grid)
                } else {
                    0.0
                };
                out.push([cell_center(i, grid), cell_center(j, grid), z]);
            }
        }
    }
    out
}

/// Evaluates the model plus one probe at every scan position and returns the
/// probe with the lowest error (first in scan order on ties). The error may
/// be worse than the model's own; accepting is the caller's call.
pub fn scan_place(
    model: &Model,
    polarity: Polarity,
    cfg: &PrimeConfig,
    ev: &Evaluator,
) -> Result<(Blob, f64)> {
    let mut best: Option<(Blob, f64)> = None;
    let mut trial = model.clone();
    trial.blobs.push(probe(model, polarity, cfg, [0.5; 3]));
    let last = trial.blobs.len() - 1;
    for pos in scan_positions(model.dim, cfg.scan_grid) {
        let blob = probe(model, polarity, cfg, pos);
        trial.blobs[last] = blob;
        let e = ev.evaluate(&trial)?;
        if best.as_ref().is_none_or(|b| e < b.1) {
            best = Some((blob, e));
        }
    }
    Ok(best.expect("scan grid is non-empty"))
}

/// Coordinate search on `x` in `[0, 1]^n`: try `±step` on each coordinate,
/// keep strict improvements, halve the step after a cycle without one.
///
/// `spent` reports evaluations used so far; the search stops once it
/// reaches `cap`.
fn half_interval<F>(
    x: &mut [f64],
    mut err: f64,
    cfg: &PrimeConfig,
    cap: Option<u64>,
    spent: &dyn Fn() -> u64,
    mut eval: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if cfg.refine_min_step >= cfg.refine_initial_step {
        return Ok(err);
    }
    let mut step = cfg.refine_initial_step;
    let mut cycles = 0;
    let mut trial = x.to_vec();
    while step >= cfg.refine_min_step && cycles < cfg.refine_max_cycles {
        let mut improved = false;
        for i in 0..x.len() {
            for dir in [1.0, -1.0] {
                let cand = (x[i] + dir * step).clamp(0.0, 1.0);
                if cand == x[i] {
                    continue;
                }
                if cap.is_some_and(|c| spent() >= c) {
                    return Ok(err);
                }
                trial[i] = cand;
                let e = eval(&trial)?;
                if e < err {
                    x[i] = cand;
                    err = e;
                    improved = true;
                    break;
                }
                trial[i] = x[i];
            }
        }
        if improved {
            cycles += 1;
        } else {
            step *= 0.5;
        }
    }
    Ok(err)
}

/// `cap` is an absolute evaluator count at which refinement stops.
pub(crate) fn refine_blob(
    model: &mut Model,
    index: usize,
    err: f64,
    cfg: &PrimeConfig,
    ev: &Evaluator,
    cap: Option<u64>,
) -> Result<f64> {
    let mut params = model.blobs[index].params();
    let mut trial = model.clone();
    let err = half_interval(&mut params, err, cfg, cap, &|| ev.evaluations(), |p| {
        trial.blobs[index] = Blob::from_params(p)?;
        ev.evaluate(&trial)
    })?;
    model.blobs[index] = Blob::from_params(&params)?;
    Ok(err)
}

pub(crate) fn refine_background(
    model: &mut Model,
    err: f64,
    cfg: &PrimeConfig,
    ev: &Evaluator,
    cap: Option<u64>,
) -> Result<f64> {
    let mut b = [model.background];
    let mut trial = model.clone();
    let err = half_interval(&mut b, err, cfg, cap, &|| ev.evaluations(), |p| {
        trial.background = p[0];
        ev.evaluate(&trial)
    })?;
    model.background = b[0];
    Ok(err)
}

/// Refines every parameter of blob `index` in genome order. Returns the
/// refined model and its error, which is never above the input's.
pub fn half_interval_refine(
    model: &Model,
    index: usize,
    cfg: &PrimeConfig,
    ev: &Evaluator,
) -> Result<(Model, f64)> {
    if index >= model.len() {
        return Err(Error::Config(format!(
            "blob index {index} out of range for {} blobs",
            model.len()
        )));
    }
    let mut m = model.clone();
    let e0 = ev.evaluate(&m)?;
    let e = refine_blob(&mut m, index, e0, cfg, ev, None)?;
    Ok((m, e))
}

/// Half-interval search on the background value alone.
pub fn adjust_background(model: &Model, cfg: &PrimeConfig, ev: &Evaluator) -> Result<(Model, f64)> {
    let mut m = model.clone();
    let e0 = ev.evaluate(&m)?;
    let e = refine_background(&mut m, e0, cfg, ev, None)?;
    Ok((m, e))
}

/// Greedy priming. Starts by matching the background, then adds one blob
/// per round while that strictly lowers the error, fewer than the blob cap
/// are placed and the evaluation cap leaves room for both probe scans.
pub fn prime(model: &Model, cfg: &PrimeConfig, ev: &Evaluator) -> Result<PrimeOutcome> {
    cfg.validate()?;
    if model.dim != ev.problem().dim() {
        return Err(Error::Dimension(
            "model and problem dimensionality differ".into(),
        ));
    }
    let start = ev.evaluations();
    let cap = cfg.max_evaluations.map(|m| start + m);
    let scan_cost = 2 * scan_positions(model.dim, cfg.scan_grid).len() as u64;
    let mut current = model.clone();
    let e0 = ev.evaluate(&current)?;
    let mut err = refine_background(&mut current, e0, cfg, ev, cap)?;
    let mut events = Vec::new();
    while current.len() < cfg.blob_cap(model.dim) {
        if cap.is_some_and(|c| ev.evaluations() + scan_cost > c) {
            break;
        }
        // Both scans see the same model, so running them before either
        // refinement changes nothing but keeps the evaluation cap exact.
        let scans = [Polarity::Light, Polarity::Dark]
            .map(|polarity| scan_place(&current, polarity, cfg, ev).map(|r| (polarity, r)));
        let mut best: Option<(Model, f64, Polarity)> = None;
        for scan in scans {
            let (polarity, (blob, scan_err)) = scan?;
            let mut cand = current.clone();
            cand.blobs.push(blob);
            let idx = cand.len() - 1;
            let e = refine_blob(&mut cand, idx, scan_err, cfg, ev, cap)?;
            if best.as_ref().is_none_or(|b| e < b.1) {
                best = Some((cand, e, polarity));
            }
        }
        let (cand, e, polarity) = best.expect("two polarities tried");
        if e >= err {
            break;
        }
        let before = err;
        current = cand;
        let after_bg = refine_background(&mut current, e, cfg, ev, cap)?;
        events.push(PrimeEvent {
            blob_index: current.len() - 1,
            polarity,
            error_before: before,
            error_after: e,
            evaluations: ev.evaluations() - start,
            error_after_background: after_bg,
        });
        err = after_bg;
    }
    Ok(PrimeOutcome {
        model: current,
        error: err,
        start_error: e0,
        events,
        evaluations: ev.evaluations() - start,
    })
}
