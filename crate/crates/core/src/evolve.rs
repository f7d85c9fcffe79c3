//! The staged global search: prime, CMA-ES, then rounds of
//! cull → split → CMA-ES, and a final cull.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cmaes::{optimize, CmaConfig, CmaTraceRow, Termination};
use crate::error::{Error, Result};
use crate::model::{decode, encode, Blob, Dim, Model};
use crate::objective::{Evaluator, FieldData, ForwardModel};
use crate::prime::{prime, PrimeConfig, PrimeEvent, PrimeOutcome};

/// Children are scaled to this fraction of the parent.
pub const SPLIT_SCALE: f64 = 2.0 / 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    /// Cull → split → CMA-ES rounds after the first CMA-ES stage.
    pub num_rounds: usize,
    /// Blobs split per round.
    pub split_count: usize,
    pub cma: CmaConfig,
    pub prime: PrimeConfig,
    /// Generation cap per CMA-ES stage; stages beyond the list use
    /// `cma.max_iterations`.
    pub stage_iteration_caps: Vec<u64>,
    /// Total evaluations for the whole run, priming included, never
    /// exceeded (beyond the one evaluation of the starting model): stages
    /// stop early or are skipped instead. Unspent budget of a stage carries
    /// over to the next one.
    pub evaluation_budget: Option<u64>,
    pub initial_background: f64,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            num_rounds: 5,
            split_count: 5,
            cma: CmaConfig::default(),
            prime: PrimeConfig::default(),
            stage_iteration_caps: Vec::new(),
            evaluation_budget: None,
            initial_background: 0.5,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.split_count == 0 {
            return Err(Error::Config("split_count must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.initial_background) {
            return Err(Error::Config(
                "initial_background must lie in [0, 1]".into(),
            ));
        }
        self.cma.validate()?;
        self.prime.validate()
    }

    fn stage_cap(&self, stage: usize) -> u64 {
        self.stage_iteration_caps
            .get(stage)
            .copied()
            .unwrap_or(self.cma.max_iterations)
    }
}

/// SplitMix64 of `master` mixed with a stage index.
pub fn derive_seed(master: u64, stage: u64) -> u64 {
    let mut z = master ^ stage.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageLabel {
    Prime,
    Cma,
    Cull,
    Split,
}

impl StageLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            StageLabel::Prime => "prime",
            StageLabel::Cma => "cma",
            StageLabel::Cull => "cull",
            StageLabel::Split => "split",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceSample {
    pub evaluations: u64,
    /// Error of the model held by the stage at this point (best-so-far
    /// within a CMA-ES stage).
    pub best_error: f64,
    pub stage: StageLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub label: StageLabel,
    pub start_evaluations: u64,
    pub end_evaluations: u64,
    pub error_before: f64,
    pub error_after: f64,
    pub blobs_before: usize,
    pub blobs_after: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub termination: Option<Termination>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunTrace {
    pub samples: Vec<TraceSample>,
    pub stages: Vec<StageSummary>,
    pub prime_events: Vec<PrimeEvent>,
    /// Per-generation CMA-ES rows with run-wide generation and evaluation
    /// numbering.
    pub cma_rows: Vec<CmaTraceRow>,
}

pub const TRACE_HEADER: &str = "evaluations,best_error,stage";

impl RunTrace {
    fn push(&mut self, evaluations: u64, error: f64, stage: StageLabel) {
        let sample = TraceSample {
            evaluations,
            best_error: error,
            stage,
        };
        match self.samples.last_mut() {
            Some(last) if last.evaluations >= evaluations => *last = sample,
            _ => self.samples.push(sample),
        }
    }

    pub fn min_error(&self) -> Option<f64> {
        self.samples.iter().map(|s| s.best_error).reduce(f64::min)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{TRACE_HEADER}")?;
        for s in &self.samples {
            writeln!(
                out,
                "{},{:e},{}",
                s.evaluations,
                s.best_error,
                s.stage.as_str()
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub model: Model,
    pub error: f64,
    pub evaluations: u64,
    pub trace: RunTrace,
}

/// A failed run, with everything traced up to the failure.
#[derive(Debug, Error)]
#[error("search aborted after {} evaluations: {source}", trace.samples.last().map_or(0, |s| s.evaluations))]
pub struct SearchError {
    #[source]
    pub source: Error,
    pub trace: Box<RunTrace>,
}

/// `error(model without blob) − error(model)`; positive means the blob helps.
pub fn contribution(model: &Model, index: usize, ev: &Evaluator) -> Result<f64> {
    check_index(model, index)?;
    let base = ev.evaluate(model)?;
    Ok(ev.evaluate(&model.without(index))? - base)
}

fn check_index(model: &Model, index: usize) -> Result<()> {
    if index >= model.len() {
        return Err(Error::Config(format!(
            "blob index {index} out of range for {} blobs",
            model.len()
        )));
    }
    Ok(())
}

/// `cap` is an absolute evaluator count; culling stops early when reached.
fn cull_known(
    model: &Model,
    mut err: f64,
    ev: &Evaluator,
    cap: Option<u64>,
) -> Result<(Model, f64)> {
    let mut current = model.clone();
    // Passes repeat until nothing is removed, so every surviving blob has a
    // non-negative contribution against the final model.
    loop {
        let mut removed = false;
        let mut i = 0;
        while i < current.len() {
            if cap.is_some_and(|c| ev.evaluations() >= c) {
                return Ok((current, err));
            }
            let without = current.without(i);
            let e = ev.evaluate(&without)?;
            if e - err < 0.0 {
                current = without;
                err = e;
                removed = true;
            } else {
                i += 1;
            }
        }
        if !removed {
            return Ok((current, err));
        }
    }
}

/// Removes blobs whose contribution is negative, in index order, against
/// the partially culled model. Returns the culled model and its error.
pub fn cull(model: &Model, ev: &Evaluator) -> Result<(Model, f64)> {
    let err = ev.evaluate(model)?;
    cull_known(model, err, ev, None)
}

/// Index of the longest semi-axis; ties go to the earlier axis.
fn long_axis(blob: &Blob) -> usize {
    let axes = blob.semi_axes();
    let n = blob.dim().as_usize();
    (0..n).fold(0, |best, i| if axes[i] > axes[best] { i } else { best })
}

/// Child centers before clamping: the parent center displaced by
/// `±(2/3)·L` along its long axis in world coordinates.
pub fn child_centers(parent: &Blob) -> ([f64; 3], [f64; 3]) {
    let axis = long_axis(parent);
    let length = parent.semi_axes()[axis];
    let rot = parent.rotation();
    let dir = [rot[0][axis], rot[1][axis], rot[2][axis]];
    let c = parent.center();
    let offset = SPLIT_SCALE * length;
    let mut a = [0.0; 3];
    let mut b = [0.0; 3];
    let dims = parent.dim().as_usize();
    for i in 0..dims {
        a[i] = c[i] - offset * dir[i];
        b[i] = c[i] + offset * dir[i];
    }
    (a, b)
}

/// Cell division: two children with every semi-axis scaled by 2/3, placed
/// along the parent's long axis so their inner boundaries meet at the
/// parent center. Intensity, strength and sharpness are inherited.
pub fn split_blob(parent: &Blob) -> (Blob, Blob) {
    let (ca, cb) = child_centers(parent);
    let make = |c: [f64; 3]| {
        let mut child = *parent;
        child.x_loc = c[0].clamp(0.0, 1.0);
        child.y_loc = c[1].clamp(0.0, 1.0);
        child.x_s *= SPLIT_SCALE;
        child.y_s *= SPLIT_SCALE;
        if let Some(d) = child.depth.as_mut() {
            d.z_loc = c[2].clamp(0.0, 1.0);
            d.z_s *= SPLIT_SCALE;
        }
        child
    };
    (make(ca), make(cb))
}

fn split_known(model: &Model, err: f64, count: usize, ev: &Evaluator) -> Result<Model> {
    let mut ranked = Vec::with_capacity(model.len());
    for i in 0..model.len() {
        ranked.push((i, ev.evaluate(&model.without(i))? - err));
    }
    // stable: equal contributions keep index order
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut chosen = vec![false; model.len()];
    for &(i, _) in ranked.iter().take(count) {
        chosen[i] = true;
    }
    let mut blobs = Vec::with_capacity(model.len() + count);
    for (blob, split) in model.blobs.iter().zip(chosen) {
        if split {
            let (a, b) = split_blob(blob);
            blobs.push(a);
            blobs.push(b);
        } else {
            blobs.push(*blob);
        }
    }
    Ok(Model {
        dim: model.dim,
        background: model.background,
        blobs,
    })
}

/// Splits the `count` blobs with the highest contribution. Each child pair
/// takes its parent's place in the blob list.
pub fn split(model: &Model, count: usize, ev: &Evaluator) -> Result<Model> {
    let err = ev.evaluate(model)?;
    split_known(model, err, count, ev)
}

struct Runner<'a, 'e> {
    ev: &'a Evaluator<'e>,
    cfg: &'a SearchConfig,
    /// Evaluations already spent before `ev_start` was taken.
    offset: u64,
    ev_start: u64,
    trace: RunTrace,
    best: Option<(Model, f64)>,
    cma_stage: usize,
    generation_base: u64,
}

impl Runner<'_, '_> {
    fn count(&self) -> u64 {
        self.offset + self.ev.evaluations() - self.ev_start
    }

    fn offer(&mut self, model: &Model, err: f64) {
        if self.best.as_ref().is_none_or(|b| err < b.1) {
            self.best = Some((model.clone(), err));
        }
    }

    fn total_cma_stages(&self) -> usize {
        self.cfg.num_rounds + 1
    }

    /// Evaluator count at which the run budget is spent.
    fn ev_cap(&self) -> Option<u64> {
        self.cfg
            .evaluation_budget
            .map(|b| (self.ev_start + b).saturating_sub(self.offset))
    }

    fn left(&self) -> Option<u64> {
        self.cfg
            .evaluation_budget
            .map(|b| b.saturating_sub(self.count()))
    }

    /// Equal share of what is left for this and the remaining CMA-ES stages,
    /// after setting aside one pass of every remaining cull and split.
    fn stage_budget(&self, blobs: usize) -> Option<u64> {
        self.left().map(|left| {
            let stages_left = (self.total_cma_stages() - self.cma_stage).max(1) as u64;
            let rounds_left = stages_left - 1;
            let k = self.cfg.split_count as u64;
            let n = blobs as u64;
            let reserve =
                (0..rounds_left).map(|r| 2 * (n + r * k) + 2).sum::<u64>() + n + rounds_left * k;
            left.saturating_sub(reserve) / stages_left
        })
    }

    fn summary(
        &mut self,
        label: StageLabel,
        start: (u64, f64, usize, Instant),
        after: (f64, usize),
        termination: Option<Termination>,
    ) {
        self.trace.stages.push(StageSummary {
            label,
            start_evaluations: start.0,
            end_evaluations: self.count(),
            error_before: start.1,
            error_after: after.0,
            blobs_before: start.2,
            blobs_after: after.1,
            termination,
            wall_seconds: start.3.elapsed().as_secs_f64(),
        });
    }

    fn cma_stage(&mut self, model: &Model, err: f64) -> Result<(Model, f64)> {
        let t0 = Instant::now();
        let start = self.count();
        let mut cma = self.cfg.cma.clone();
        cma.max_iterations = self.cfg.stage_cap(self.cma_stage);
        cma.max_evaluations = self.stage_budget(model.len());
        cma.seed = derive_seed(self.cfg.seed, self.cma_stage as u64);
        self.cma_stage += 1;
        // not even one generation fits: skip rather than overspend
        if cma
            .max_evaluations
            .is_some_and(|m| m < 1 + cma.population_size as u64)
        {
            return Ok((model.clone(), err));
        }

        let (dim, n) = (model.dim, model.len());
        let ev = self.ev;
        let outcome = optimize(
            |g: &[f64]| ev.evaluate(&decode(g, dim, n)?),
            &encode(model).values,
            &cma,
        )?;
        for row in &outcome.trace {
            let global = start + row.evaluations;
            self.trace.push(global, row.best_error, StageLabel::Cma);
            self.trace.cma_rows.push(CmaTraceRow {
                generation: self.generation_base + row.generation,
                evaluations: global,
                ..row.clone()
            });
        }
        self.generation_base += outcome.generations + 1;
        let best = decode(&outcome.best, dim, n)?;
        self.offer(&best, outcome.best_error);
        self.summary(
            StageLabel::Cma,
            (start, err, n, t0),
            (outcome.best_error, n),
            Some(outcome.termination),
        );
        Ok((best, outcome.best_error))
    }

    fn cull_stage(&mut self, model: &Model, err: f64) -> Result<(Model, f64)> {
        let t0 = Instant::now();
        let start = self.count();
        let (culled, e) = cull_known(model, err, self.ev, self.ev_cap())?;
        self.trace.push(self.count(), e, StageLabel::Cull);
        self.offer(&culled, e);
        self.summary(
            StageLabel::Cull,
            (start, err, model.len(), t0),
            (e, culled.len()),
            None,
        );
        Ok((culled, e))
    }

    fn split_stage(&mut self, model: &Model, err: f64) -> Result<(Model, f64)> {
        // ranking plus the split model's own evaluation
        if self.left().is_some_and(|l| l < model.len() as u64 + 1) {
            return Ok((model.clone(), err));
        }
        let t0 = Instant::now();
        let start = self.count();
        let split_model = split_known(model, err, self.cfg.split_count, self.ev)?;
        let e = self.ev.evaluate(&split_model)?;
        self.trace.push(self.count(), e, StageLabel::Split);
        self.offer(&split_model, e);
        self.summary(
            StageLabel::Split,
            (start, err, model.len(), t0),
            (e, split_model.len()),
            None,
        );
        Ok((split_model, e))
    }

    fn run(mut self, primed: &PrimeOutcome) -> Result<SearchOutcome, SearchError> {
        match self.stages(primed) {
            Ok(()) => {
                let evaluations = self.count();
                let (model, error) = self.best.expect("primed model offered");
                Ok(SearchOutcome {
                    model,
                    error,
                    evaluations,
                    trace: self.trace,
                })
            }
            Err(source) => Err(SearchError {
                source,
                trace: Box::new(self.trace),
            }),
        }
    }

    fn stages(&mut self, primed: &PrimeOutcome) -> Result<()> {
        let mut model = primed.model.clone();
        let mut err = primed.error;
        self.offer(&model, err);
        (model, err) = self.cma_stage(&model, err)?;
        for _ in 0..self.cfg.num_rounds {
            (model, err) = self.cull_stage(&model, err)?;
            if model.is_empty() {
                // nothing left to split; keep optimizing what there is
                (model, err) = self.cma_stage(&model, err)?;
                continue;
            }
            (model, err) = self.split_stage(&model, err)?;
            (model, err) = self.cma_stage(&model, err)?;
        }
        self.cull_stage(&model, err)?;
        Ok(())
    }
}

fn prime_trace(primed: &PrimeOutcome, t0: Option<Instant>) -> RunTrace {
    let mut trace = RunTrace::default();
    trace.push(1, primed.start_error, StageLabel::Prime);
    for e in &primed.events {
        trace.push(e.evaluations, e.error_after_background, StageLabel::Prime);
    }
    trace.push(primed.evaluations, primed.error, StageLabel::Prime);
    trace.prime_events = primed.events.clone();
    trace.stages.push(StageSummary {
        label: StageLabel::Prime,
        start_evaluations: 0,
        end_evaluations: primed.evaluations,
        error_before: primed.start_error,
        error_after: primed.error,
        blobs_before: 0,
        blobs_after: primed.model.len(),
        termination: None,
        wall_seconds: t0.map_or(0.0, |t| t.elapsed().as_secs_f64()),
    });
    trace
}

/// Runs every stage after priming, continuing the evaluation count of
/// `primed`. Priming is deterministic, so one primed model can seed runs
/// with different seeds or schedules.
pub fn evolve_primed(
    ev: &Evaluator,
    cfg: &SearchConfig,
    primed: &PrimeOutcome,
) -> Result<SearchOutcome, SearchError> {
    evolve_with_trace(ev, cfg, primed, prime_trace(primed, None))
}

fn evolve_with_trace(
    ev: &Evaluator,
    cfg: &SearchConfig,
    primed: &PrimeOutcome,
    trace: RunTrace,
) -> Result<SearchOutcome, SearchError> {
    if let Err(source) = cfg.validate() {
        return Err(SearchError {
            source,
            trace: Box::new(trace),
        });
    }
    let runner = Runner {
        ev,
        cfg,
        offset: primed.evaluations,
        ev_start: ev.evaluations(),
        trace,
        best: None,
        cma_stage: 0,
        generation_base: 0,
    };
    runner.run(primed)
}

/// Full staged search with an existing evaluator.
pub fn search_with(ev: &Evaluator, cfg: &SearchConfig) -> Result<SearchOutcome, SearchError> {
    let fail = |source| SearchError {
        source,
        trace: Box::default(),
    };
    cfg.validate().map_err(fail)?;
    let dim: Dim = ev.problem().dim();
    let t0 = Instant::now();
    let mut prime_cfg = cfg.prime.clone();
    if let Some(b) = cfg.evaluation_budget {
        prime_cfg.max_evaluations = Some(prime_cfg.max_evaluations.map_or(b, |m| m.min(b)));
    }
    let primed = prime(&Model::blank(dim, cfg.initial_background), &prime_cfg, ev).map_err(fail)?;
    let trace = prime_trace(&primed, Some(t0));
    evolve_with_trace(ev, cfg, &primed, trace)
}

/// Prime → CMA-ES → `num_rounds` × (cull → split → CMA-ES) → cull.
/// Returns the best model seen anywhere in the run.
pub fn search(
    problem: &FieldData,
    cfg: &SearchConfig,
    forward: Option<&dyn ForwardModel>,
) -> Result<SearchOutcome, SearchError> {
    let ev = Evaluator::new(problem, forward).map_err(|source| SearchError {
        source,
        trace: Box::default(),
    })?;
    search_with(&ev, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::rasterize_2d;

    fn bar_target() -> Model {
        let mut bar = Blob::disc(0.9, 1.0, 0.6, [0.5, 0.5], 0.1);
        bar.x_s = 0.35;
        bar.y_s = 0.08;
        bar.z_r = 0.15;
        Model::with_blobs(Dim::Two, 0.15, vec![bar]).unwrap()
    }

    fn problem(m: &Model, size: usize) -> FieldData {
        FieldData::Picture(rasterize_2d(m, size, size).unwrap())
    }

    #[test]
    fn contribution_signs() {
        let target = Model::with_blobs(
            Dim::Two,
            0.1,
            vec![Blob::disc(0.9, 1.0, 0.5, [0.4, 0.5], 0.2)],
        )
        .unwrap();
        let p = problem(&target, 24);
        let ev = Evaluator::picture(&p).unwrap();
        assert!(contribution(&target, 0, &ev).unwrap() > 0.0);

        // a zero-intensity blob adds nothing to any term of the combination
        let mut inert = target.clone();
        inert.blobs.push(Blob::disc(0.0, 1.0, 0.5, [0.8, 0.8], 0.1));
        assert_eq!(contribution(&inert, 1, &ev).unwrap(), 0.0);

        // a bright blob over dark background only hurts
        let mut stray = target.clone();
        stray
            .blobs
            .push(Blob::disc(1.0, 1.0, 0.5, [0.85, 0.15], 0.1));
        let direct = ev.evaluate(&stray.without(1)).unwrap() - ev.evaluate(&stray).unwrap();
        let c = contribution(&stray, 1, &ev).unwrap();
        assert_eq!(c, direct);
        assert!(c < 0.0);
        assert!(contribution(&stray, 2, &ev).is_err());
    }

    #[test]
    fn cull_cases() {
        let target = Model::with_blobs(
            Dim::Two,
            0.1,
            vec![
                Blob::disc(0.9, 1.0, 0.5, [0.3, 0.5], 0.15),
                Blob::disc(0.7, 0.9, 0.5, [0.7, 0.4], 0.15),
            ],
        )
        .unwrap();
        let p = problem(&target, 24);
        let ev = Evaluator::picture(&p).unwrap();
        let (same, e) = cull(&target, &ev).unwrap();
        assert_eq!(same, target);
        assert_eq!(e, 0.0);

        let mut bad = target.clone();
        bad.blobs
            .insert(1, Blob::disc(1.0, 1.0, 0.7, [0.5, 0.85], 0.1));
        let before = ev.evaluate(&bad).unwrap();
        let (culled, after) = cull(&bad, &ev).unwrap();
        assert_eq!(culled, target);
        assert!(after <= before);

        let blank = Model::blank(Dim::Two, 0.3);
        assert_eq!(cull(&blank, &ev).unwrap().0, blank);
    }

    #[test]
    fn split_blob_examples() {
        let mut parent = Blob::disc(0.8, 0.7, 0.4, [0.5, 0.5], 0.3);
        parent.y_s = 0.1;
        let (a, b) = split_blob(&parent);
        assert!((a.x_loc - 0.3).abs() < 1e-12 && (b.x_loc - 0.7).abs() < 1e-12);
        assert!((a.y_loc - 0.5).abs() < 1e-12);
        assert!((a.x_s - 0.2).abs() < 1e-12 && (a.y_s - 0.1 * 2.0 / 3.0).abs() < 1e-12);
        assert_eq!((a.delta, a.s, a.alpha), (0.8, 0.7, 0.4));
        // children boundaries meet at the parent center
        assert!((a.x_loc + a.x_s - 0.5).abs() < 1e-12);
        assert!((b.x_loc - b.x_s - 0.5).abs() < 1e-12);

        let mut circle = Blob::disc(0.5, 0.5, 0.5, [0.5, 0.5], 0.2);
        circle.z_r = 0.5; // quarter turn: blob x axis points along world y
        let (a, b) = split_blob(&circle);
        assert!((a.x_loc - 0.5).abs() < 1e-12 && (b.x_loc - 0.5).abs() < 1e-12);
        assert!((b.y_loc - a.y_loc - 4.0 / 3.0 * 0.2).abs() < 1e-12);

        let edge = Blob::disc(0.5, 0.5, 0.5, [0.05, 0.5], 0.3);
        let (a, b) = split_blob(&edge);
        assert_eq!(a.x_loc, 0.0);
        assert!((b.x_loc - 0.25).abs() < 1e-12);
    }

    #[test]
    fn split_3d_uses_longest_axis() {
        let mut parent = Blob::ball(0.5, 0.5, 0.5, [0.5, 0.5, 0.5], 0.1);
        parent.depth.as_mut().unwrap().z_s = 0.3;
        let (a, b) = split_blob(&parent);
        let (da, db) = (a.depth.unwrap(), b.depth.unwrap());
        assert!((da.z_loc - 0.3).abs() < 1e-12 && (db.z_loc - 0.7).abs() < 1e-12);
        assert!((a.x_loc - 0.5).abs() < 1e-12);
        assert!((da.z_s - 0.2).abs() < 1e-12);
    }

    #[test]
    fn split_counts() {
        let blobs: Vec<Blob> = (0..4)
            .map(|i| Blob::disc(0.9, 1.0, 0.5, [0.2 + 0.2 * i as f64, 0.5], 0.08))
            .collect();
        let m = Model::with_blobs(Dim::Two, 0.1, blobs).unwrap();
        let p = problem(&m, 24);
        let ev = Evaluator::picture(&p).unwrap();
        assert_eq!(split(&m, 3, &ev).unwrap().len(), 7);
        assert_eq!(split(&m, 10, &ev).unwrap().len(), 8);
    }

    #[test]
    fn split_then_refit_beats_pre_split() {
        // two touching discs: one ellipse cannot match the waist
        let target = Model::with_blobs(
            Dim::Two,
            0.15,
            vec![
                Blob::disc(0.9, 1.0, 0.6, [0.32, 0.5], 0.16),
                Blob::disc(0.9, 1.0, 0.6, [0.68, 0.5], 0.16),
            ],
        )
        .unwrap();
        let p = problem(&target, 32);
        let ev = Evaluator::picture(&p).unwrap();
        let mut rough = Blob::disc(0.9, 1.0, 0.6, [0.5, 0.5], 0.32);
        rough.y_s = 0.16;
        let start = Model::with_blobs(Dim::Two, 0.15, vec![rough]).unwrap();
        let cma = CmaConfig {
            max_iterations: 150,
            sigma0: 0.02,
            seed: 5,
            ..CmaConfig::default()
        };
        let fit = |m: &Model, seed: u64| {
            let (dim, n) = (m.dim, m.len());
            let out = optimize(
                |g: &[f64]| ev.evaluate(&decode(g, dim, n)?),
                &encode(m).values,
                &CmaConfig {
                    seed,
                    ..cma.clone()
                },
            )
            .unwrap();
            (decode(&out.best, dim, n).unwrap(), out.best_error)
        };
        let (pre, pre_err) = fit(&start, 1);
        let (culled, _) = cull(&pre, &ev).unwrap();
        let split_model = split(&culled, 1, &ev).unwrap();
        let (_, post_err) = fit(&split_model, 2);
        assert!(post_err < pre_err, "{post_err} vs {pre_err}");
    }

    fn small_cfg(rounds: usize, seed: u64) -> SearchConfig {
        SearchConfig {
            num_rounds: rounds,
            split_count: 2,
            cma: CmaConfig {
                population_size: 16,
                parent_count: 8,
                sigma0: 0.02,
                max_iterations: 30,
                ..CmaConfig::default()
            },
            prime: PrimeConfig {
                max_blobs: Some(2),
                scan_grid: 5,
                refine_min_step: 1.0 / 64.0,
                ..PrimeConfig::default()
            },
            seed,
            ..SearchConfig::default()
        }
    }

    #[test]
    fn search_no_rounds_has_no_split_stage() {
        let p = problem(&bar_target(), 20);
        let out = search(&p, &small_cfg(0, 1), None).unwrap();
        let labels: Vec<_> = out.trace.stages.iter().map(|s| s.label).collect();
        assert_eq!(
            labels,
            vec![StageLabel::Prime, StageLabel::Cma, StageLabel::Cull]
        );
        assert!(out
            .trace
            .samples
            .iter()
            .all(|s| s.stage != StageLabel::Split));
    }

    #[test]
    fn search_trace_invariants_and_determinism() {
        let p = problem(&bar_target(), 20);
        let cfg = small_cfg(2, 7);
        let a = search(&p, &cfg, None).unwrap();
        let b = search(&p, &cfg, None).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.trace.samples, b.trace.samples);
        for w in a.trace.samples.windows(2) {
            assert!(w[1].evaluations > w[0].evaluations);
        }
        assert_eq!(a.trace.min_error(), Some(a.error));
        let ev = Evaluator::picture(&p).unwrap();
        assert_eq!(ev.evaluate(&a.model).unwrap(), a.error);
        let primed = a.trace.stages[0].error_after;
        assert!(a.error <= primed);
        // stage dimension only changes at cull/split
        for s in a.trace.stages.iter().filter(|s| s.label == StageLabel::Cma) {
            assert_eq!(s.blobs_before, s.blobs_after);
        }
        let mut csv = Vec::new();
        a.trace.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with(TRACE_HEADER));
    }

    #[test]
    fn budget_is_a_hard_cap() {
        let p = problem(&bar_target(), 20);
        // from starving priming itself up to a budget every stage can use
        for budget in [0, 50, 400, 1500, 6000] {
            let mut cfg = small_cfg(2, 3);
            cfg.evaluation_budget = Some(budget);
            let ev = Evaluator::picture(&p).unwrap();
            let out = search_with(&ev, &cfg).unwrap();
            assert_eq!(out.evaluations, ev.evaluations());
            assert!(
                out.evaluations <= budget.max(1),
                "{budget}: {}",
                out.evaluations
            );
        }
    }

    #[test]
    fn evolve_from_primed_matches_full_search() {
        let p = problem(&bar_target(), 20);
        let cfg = small_cfg(1, 11);
        let full = search(&p, &cfg, None).unwrap();
        let ev = Evaluator::picture(&p).unwrap();
        let primed = prime(
            &Model::blank(Dim::Two, cfg.initial_background),
            &cfg.prime,
            &ev,
        )
        .unwrap();
        let ev2 = Evaluator::picture(&p).unwrap();
        let resumed = evolve_primed(&ev2, &cfg, &primed).unwrap();
        assert_eq!(resumed.model, full.model);
        assert_eq!(resumed.trace.samples, full.trace.samples);
    }

    #[test]
    fn seeds_differ_per_stage() {
        assert_ne!(derive_seed(1, 0), derive_seed(1, 1));
        assert_ne!(derive_seed(1, 0), derive_seed(2, 0));
        assert_eq!(derive_seed(9, 4), derive_seed(9, 4));
    }
}
