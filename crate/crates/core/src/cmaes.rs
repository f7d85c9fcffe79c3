//! CMA-ES over box-constrained genomes in `[0, 1]^n`.
//!
//! Follows the reference (μ/μ_w, λ) algorithm with cumulative step-size
//! adaptation, rank-one and rank-μ covariance updates. Sampled candidates
//! are clamped into the box and the update uses the clamped points, so the
//! distribution learns from what was actually evaluated.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const EIGEN_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CmaConfig {
    /// Offspring per generation (λ).
    pub population_size: usize,
    /// Parents recombined into the new mean (μ).
    pub parent_count: usize,
    pub sigma0: f64,
    /// Generation cap.
    pub max_iterations: u64,
    /// Optional cap on objective calls, including the initial incumbent.
    pub max_evaluations: Option<u64>,
    /// Generations over which the best error must improve.
    pub flat_fitness_window: usize,
    /// Minimum relative improvement over the window.
    pub flat_fitness_epsilon: f64,
    pub seed: u64,
}

impl Default for CmaConfig {
    fn default() -> Self {
        CmaConfig {
            population_size: 50,
            parent_count: 25,
            sigma0: 0.01,
            max_iterations: 1000,
            max_evaluations: None,
            flat_fitness_window: 50,
            flat_fitness_epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl CmaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("population_size must be at least 2".into()));
        }
        if self.parent_count == 0 || self.parent_count > self.population_size {
            return Err(Error::Config(
                "parent_count must lie in 1..=population_size".into(),
            ));
        }
        if !(self.sigma0 > 0.0 && self.sigma0.is_finite()) {
            return Err(Error::Config("sigma0 must be positive".into()));
        }
        if self.flat_fitness_window == 0 {
            return Err(Error::Config(
                "flat_fitness_window must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Search distribution and bookkeeping of one CMA-ES run.
#[derive(Debug, Clone)]
pub struct CmaState {
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub covariance: DMatrix<f64>,
    pub path_sigma: DVector<f64>,
    pub path_c: DVector<f64>,
    pub generation: u64,
    pub best: Option<(Vec<f64>, f64)>,
    /// Eigenvectors of the covariance (columns).
    basis: DMatrix<f64>,
    /// Square roots of the covariance eigenvalues.
    scales: DVector<f64>,
    eigen_generation: u64,
    params: Strategy,
}

#[derive(Debug, Clone)]
struct Strategy {
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    eigen_interval: u64,
}

impl Strategy {
    fn new(n: usize, lambda: usize, mu: usize) -> Self {
        let nf = n as f64;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu =
            (2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff)).min(1.0 - c_1);
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        let eigen_interval = ((lambda as f64 / ((c_1 + c_mu) * nf * 10.0)).floor() as u64).max(1);
        Strategy {
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            eigen_interval,
        }
    }
}

/// Result of evaluating one candidate; non-finite errors rank last.
fn rank_key(e: f64) -> f64 {
    if e.is_finite() {
        e
    } else {
        f64::INFINITY
    }
}

impl CmaState {
    pub fn new(x0: &[f64], config: &CmaConfig) -> Result<Self> {
        config.validate()?;
        if x0.is_empty() {
            return Err(Error::Config(
                "cannot optimize a zero-dimensional genome".into(),
            ));
        }
        let n = x0.len();
        let mean = DVector::from_iterator(n, x0.iter().map(|v| v.clamp(0.0, 1.0)));
        Ok(CmaState {
            mean,
            sigma: config.sigma0,
            covariance: DMatrix::identity(n, n),
            path_sigma: DVector::zeros(n),
            path_c: DVector::zeros(n),
            generation: 0,
            best: None,
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            eigen_generation: 0,
            params: Strategy::new(n, config.population_size, config.parent_count),
        })
    }

    pub fn dimension(&self) -> usize {
        self.mean.len()
    }

    pub fn best_error(&self) -> Option<f64> {
        self.best.as_ref().map(|b| b.1)
    }

    /// One draw of `mean + σ·N(0, C)` before clamping.
    pub fn sample_unclamped<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.dimension();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let y = &self.basis * z.component_mul(&self.scales);
        (&self.mean + y * self.sigma).iter().copied().collect()
    }

    /// Samples a population, each coordinate clamped into `[0, 1]`.
    pub fn ask<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<Vec<f64>> {
        (0..self.params.lambda)
            .map(|_| {
                let mut x = self.sample_unclamped(rng);
                x.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
                x
            })
            .collect()
    }

    /// Records an externally evaluated point as the best-so-far if it is.
    pub fn offer_incumbent(&mut self, x: &[f64], error: f64) {
        let e = rank_key(error);
        if self.best.as_ref().is_none_or(|b| e < b.1) {
            self.best = Some((x.to_vec(), e));
        }
    }

    pub fn tell(&mut self, candidates: &[Vec<f64>], errors: &[f64]) -> Result<()> {
        let n = self.dimension();
        if candidates.len() != errors.len() || candidates.is_empty() {
            return Err(Error::Structural {
                what: "candidate errors",
                expected: candidates.len(),
                actual: errors.len(),
            });
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != n) {
            return Err(Error::Structural {
                what: "candidate",
                expected: n,
                actual: c.len(),
            });
        }
        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| rank_key(errors[a]).total_cmp(&rank_key(errors[b])));
        self.offer_incumbent(&candidates[order[0]], errors[order[0]]);

        let p = &self.params;
        let mu = p.weights.len().min(candidates.len());
        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let mut mean_step = DVector::zeros(n);
        for (w, y) in p.weights.iter().zip(&steps) {
            mean_step.axpy(*w, y, 1.0);
        }
        self.mean = &old_mean + &mean_step * self.sigma;

        // C^{-1/2} · step
        let inv_sqrt_step =
            &self.basis * (self.basis.transpose() * &mean_step).component_div(&self.scales);
        self.path_sigma = &self.path_sigma * (1.0 - p.c_sigma)
            + inv_sqrt_step * (p.c_sigma * (2.0 - p.c_sigma) * p.mu_eff).sqrt();
        let gen = (self.generation + 1) as f64;
        let ps_norm = self.path_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - p.c_sigma).powf(2.0 * gen)).sqrt() / p.chi_n
            < 1.4 + 2.0 / (n as f64 + 1.0);
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.path_c = &self.path_c * (1.0 - p.c_c)
            + &mean_step * (h * (p.c_c * (2.0 - p.c_c) * p.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in p.weights.iter().zip(&steps) {
            rank_mu.ger(*w, y, y, 1.0);
        }
        let correction = (1.0 - h) * p.c_c * (2.0 - p.c_c);
        let decay = 1.0 - p.c_1 - p.c_mu;
        let mut c = &self.covariance * (decay + p.c_1 * correction);
        c.ger(p.c_1, &self.path_c, &self.path_c, 1.0);
        c += rank_mu * p.c_mu;
        // exact symmetry
        let ct = c.transpose();
        c = (c + ct) * 0.5;
        self.covariance = c;

        self.sigma *= ((p.c_sigma / p.d_sigma) * (ps_norm / p.chi_n - 1.0)).exp();
        self.generation += 1;
        if self.generation - self.eigen_generation >= p.eigen_interval {
            self.refresh_eigen();
        }
        Ok(())
    }

    fn refresh_eigen(&mut self) {
        self.eigen_generation = self.generation;
        let eig = SymmetricEigen::new(self.covariance.clone());
        self.basis = eig.eigenvectors;
        self.scales = eig.eigenvalues.map(|v| v.max(EIGEN_FLOOR).sqrt());
    }
}

/// One row of the per-generation optimizer trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CmaTraceRow {
    pub generation: u64,
    pub evaluations: u64,
    pub best_error: f64,
    pub sigma: f64,
    pub mean_norm: f64,
}

pub const CMA_TRACE_HEADER: &str = "generation,evaluations,best_error,sigma,mean_norm";

pub fn write_cma_trace<W: Write>(mut out: W, rows: &[CmaTraceRow]) -> std::io::Result<()> {
    writeln!(out, "{CMA_TRACE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e}",
            r.generation, r.evaluations, r.best_error, r.sigma, r.mean_norm
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    MaxEvaluations,
    FlatFitness,
}

#[derive(Debug, Clone)]
pub struct CmaOutcome {
    pub best: Vec<f64>,
    pub best_error: f64,
    pub evaluations: u64,
    pub generations: u64,
    pub termination: Termination,
    pub trace: Vec<CmaTraceRow>,
}

/// Minimizes `objective` from incumbent `x0` with ask/tell until the
/// generation or evaluation cap, or until the best error stalls for
/// `flat_fitness_window` generations.
///
/// `x0` is evaluated first and kept, so the result is never worse than it.
pub fn optimize<F, E>(mut objective: F, x0: &[f64], config: &CmaConfig) -> Result<CmaOutcome, E>
where
    F: FnMut(&[f64]) -> Result<f64, E>,
    E: From<Error>,
{
    let mut state = CmaState::new(x0, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let x0: Vec<f64> = state.mean.iter().copied().collect();
    let e0 = objective(&x0)?;
    state.offer_incumbent(&x0, e0);
    let mut evaluations = 1u64;
    let mut trace = vec![CmaTraceRow {
        generation: 0,
        evaluations,
        best_error: rank_key(e0),
        sigma: state.sigma,
        mean_norm: state.mean.norm(),
    }];
    let mut history = vec![rank_key(e0)];
    let termination = loop {
        if state.generation >= config.max_iterations {
            break Termination::MaxIterations;
        }
        if let Some(cap) = config.max_evaluations {
            if evaluations + config.population_size as u64 > cap {
                break Termination::MaxEvaluations;
            }
        }
        let candidates = state.ask(&mut rng);
        let mut errors = Vec::with_capacity(candidates.len());
        for c in &candidates {
            errors.push(objective(c)?);
        }
        evaluations += candidates.len() as u64;
        state.tell(&candidates, &errors)?;
        let best = state.best_error().expect("incumbent recorded");
        history.push(best);
        trace.push(CmaTraceRow {
            generation: state.generation,
            evaluations,
            best_error: best,
            sigma: state.sigma,
            mean_norm: state.mean.norm(),
        });
        let w = config.flat_fitness_window;
        if history.len() > w {
            let old = history[history.len() - 1 - w];
            if old - best <= config.flat_fitness_epsilon * old.abs() {
                break Termination::FlatFitness;
            }
        }
    };
    let (best, best_error) = state.best.expect("incumbent recorded");
    Ok(CmaOutcome {
        best,
        best_error,
        evaluations,
        generations: state.generation,
        termination,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sphere(x: &[f64]) -> Result<f64> {
        Ok(x.iter().map(|v| (v - 0.7).powi(2)).sum())
    }

    #[test]
    fn config_validation() {
        let bad = CmaConfig {
            parent_count: 60,
            ..CmaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CmaConfig {
            sigma0: 0.0,
            ..CmaConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = CmaConfig {
            flat_fitness_window: 0,
            ..CmaConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tiny_sigma_reproduces_mean() {
        let cfg = CmaConfig {
            sigma0: 1e-300,
            ..CmaConfig::default()
        };
        let x0 = vec![0.2, 0.9, 1.0, 0.5];
        let state = CmaState::new(&x0, &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for c in state.ask(&mut rng) {
            assert_eq!(c, x0);
        }
    }

    #[test]
    fn ask_is_seeded() {
        let cfg = CmaConfig::default();
        let state = CmaState::new(&[0.5; 6], &cfg).unwrap();
        let a = state.ask(&mut ChaCha8Rng::seed_from_u64(9));
        let b = state.ask(&mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
    }

    #[test]
    fn covariance_stays_symmetric_and_clamped() {
        let cfg = CmaConfig {
            sigma0: 0.3,
            ..CmaConfig::default()
        };
        let mut state = CmaState::new(&[0.1; 5], &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let cands = state.ask(&mut rng);
            assert!(cands.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
            let errs: Vec<f64> = cands.iter().map(|c| sphere(c).unwrap()).collect();
            state.tell(&cands, &errs).unwrap();
            assert_eq!(state.covariance, state.covariance.transpose());
        }
    }

    #[test]
    fn non_finite_errors_rank_last() {
        let cfg = CmaConfig::default();
        let mut state = CmaState::new(&[0.5; 3], &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cands = state.ask(&mut rng);
        let mut errs: Vec<f64> = cands.iter().map(|c| sphere(c).unwrap()).collect();
        errs[0] = f64::NAN;
        errs[1] = -f64::INFINITY;
        state.tell(&cands, &errs).unwrap();
        let best = state.best_error().unwrap();
        assert!(best.is_finite());
    }

    #[test]
    fn incumbent_retained_at_optimum() {
        let x0 = vec![0.7; 4];
        let out = optimize(sphere, &x0, &CmaConfig::default()).unwrap();
        assert_eq!(out.best, x0);
        assert_eq!(out.best_error, 0.0);
    }

    #[test]
    fn zero_budget_returns_x0() {
        let cfg = CmaConfig {
            max_iterations: 0,
            ..CmaConfig::default()
        };
        let x0 = vec![0.1, 0.2];
        let out = optimize(sphere, &x0, &cfg).unwrap();
        assert_eq!(out.best, x0);
        assert_eq!(out.evaluations, 1);
        assert_eq!(out.best_error, sphere(&x0).unwrap());
        assert_eq!(out.termination, Termination::MaxIterations);
    }

    #[test]
    fn flat_landscape_stops_after_window() {
        let cfg = CmaConfig {
            flat_fitness_window: 7,
            ..CmaConfig::default()
        };
        let out = optimize(|_: &[f64]| Ok::<f64, Error>(1.0), &[0.5; 3], &cfg).unwrap();
        assert_eq!(out.termination, Termination::FlatFitness);
        assert_eq!(out.generations, 7);
    }

    #[test]
    fn best_so_far_is_monotone() {
        let out = optimize(sphere, &[0.1; 8], &CmaConfig::default()).unwrap();
        for w in out.trace.windows(2) {
            assert!(w[1].best_error <= w[0].best_error);
            assert!(w[1].evaluations > w[0].evaluations);
        }
    }

    #[test]
    fn objective_errors_propagate() {
        let cfg = CmaConfig::default();
        let mut calls = 0;
        let res = optimize(
            |_: &[f64]| {
                calls += 1;
                if calls > 3 {
                    Err(Error::Config("boom".into()))
                } else {
                    Ok(1.0)
                }
            },
            &[0.5; 2],
            &cfg,
        );
        assert!(res.is_err());
    }

    #[test]
    fn trace_csv_layout() {
        let mut buf = Vec::new();
        write_cma_trace(
            &mut buf,
            &[CmaTraceRow {
                generation: 1,
                evaluations: 51,
                best_error: 0.5,
                sigma: 0.01,
                mean_norm: 1.0,
            }],
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{CMA_TRACE_HEADER}\n1,51,5e-1,1e-2,1e0\n"));
    }
}
