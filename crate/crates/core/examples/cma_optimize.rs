//! The CMA-ES optimizer on its own, minimizing Rosenbrock in the unit box.
//!
//!     cargo run --release --example cma_optimize

use cellsplit::cmaes::{optimize, CmaConfig};
use cellsplit::Error;

/// Rosenbrock on [-2, 2]^n, rescaled into [0, 1]^n. Minimum 0 at x = 0.75.
fn rosenbrock(x: &[f64]) -> Result<f64, Error> {
    let y: Vec<f64> = x.iter().map(|v| 4.0 * v - 2.0).collect();
    Ok(y.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum())
}

fn main() -> Result<(), Error> {
    let cfg = CmaConfig {
        sigma0: 0.1,
        max_evaluations: Some(50_000),
        seed: 7,
        ..CmaConfig::default()
    };
    let out = optimize(rosenbrock, &[0.5; 5], &cfg)?;
    for row in out.trace.iter().step_by(25) {
        println!(
            "gen {:>4}  evals {:>6}  best {:10.3e}  sigma {:.2e}",
            row.generation, row.evaluations, row.best_error, row.sigma
        );
    }
    println!(
        "stopped by {:?} after {} evaluations: f = {:.3e} at {:.6?}",
        out.termination, out.evaluations, out.best_error, out.best
    );
    Ok(())
}
