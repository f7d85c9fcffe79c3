//! Rank-sum comparison of two run populations.
//!
//! Runs a short search with and without splitting over a handful of seeds
//! and reports the comparison table. Small samples get an exact p-value.
//!
//!     cargo run --release --example compare_runs -- [seeds]

use cellsplit::cli::{ComparisonReport, SampleSummary};
use cellsplit::evolve::{evolve_primed, SearchConfig};
use cellsplit::objective::{Evaluator, FieldData};
use cellsplit::prime::prime;
use cellsplit::raster::rasterize_2d;
use cellsplit::{Blob, Dim, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let seeds: u64 = std::env::args().nth(1).map_or(Ok(5), |s| s.parse())?;

    let blobs = [
        (0.95, 1.0, [0.3, 0.3], 0.12),
        (0.9, 0.8, [0.55, 0.4], 0.1),
        (0.05, 0.9, [0.7, 0.7], 0.15),
        (0.85, 0.6, [0.25, 0.75], 0.08),
        (0.1, 0.7, [0.45, 0.6], 0.07),
    ]
    .map(|(delta, s, c, r)| Blob::disc(delta, s, 0.5, c, r));
    let truth = Model::with_blobs(Dim::Two, 0.45, blobs.to_vec())?;
    let problem = FieldData::Picture(rasterize_2d(&truth, 32, 32)?);
    let base = SearchConfig {
        evaluation_budget: Some(20_000),
        num_rounds: 3,
        split_count: 2,
        ..SearchConfig::default()
    };
    let ev = Evaluator::picture(&problem)?;
    let primed = prime(
        &Model::blank(Dim::Two, base.initial_background),
        &base.prime,
        &ev,
    )?;

    let mut errors = [Vec::new(), Vec::new()];
    for seed in 0..seeds {
        for (k, rounds) in [3, 0].into_iter().enumerate() {
            let cfg = SearchConfig {
                num_rounds: rounds,
                seed,
                ..base.clone()
            };
            let ev = Evaluator::picture(&problem)?;
            errors[k].push(evolve_primed(&ev, &cfg, &primed)?.error);
        }
    }
    let [split, no_split] = errors;
    let report = ComparisonReport::from_samples(
        SampleSummary::new("split".into(), split),
        SampleSummary::new("no-split".into(), no_split),
    )?;
    print!("{}", report.to_table());
    Ok(())
}
