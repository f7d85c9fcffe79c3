//! Splitting against no splitting on self-generated pictures.
//!
//! Both variants start from the same primed model and get the same
//! evaluation budget. The split variant runs five rounds of
//! cull → split (up to five blobs) → CMA-ES; the other spends the whole
//! budget in one CMA-ES stage.
//!
//!     cargo run --release --example split_vs_nosplit -- [seeds] [budget] [target]

use std::time::Instant;

use cellsplit::evolve::{evolve_primed, SearchConfig};
use cellsplit::objective::{Evaluator, FieldData};
use cellsplit::prime::prime;
use cellsplit::raster::rasterize_2d;
use cellsplit::stats::rank_sum;
use cellsplit::{Blob, Dim, Model};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SIZE: usize = 64;

/// A picture of `n` clearly visible blobs on a mid-gray background.
fn target(seed: u64, n: usize) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blobs = (0..n)
        .map(|_| {
            let light = rng.random_bool(0.6);
            let mut b = Blob::disc(
                if light {
                    rng.random_range(0.7..1.0)
                } else {
                    rng.random_range(0.0..0.25)
                },
                rng.random_range(0.3..1.0),
                rng.random_range(0.15..0.6),
                [rng.random_range(0.1..0.9), rng.random_range(0.1..0.9)],
                rng.random_range(0.06..0.2),
            );
            b.y_s = rng.random_range(0.06..0.2);
            b.z_r = rng.random();
            b
        })
        .collect();
    Model::with_blobs(Dim::Two, rng.random_range(0.3..0.6), blobs).unwrap()
}

fn variant(split: bool, budget: u64) -> SearchConfig {
    SearchConfig {
        num_rounds: if split { 5 } else { 0 },
        split_count: 5,
        evaluation_budget: Some(budget),
        ..SearchConfig::default()
    }
}

fn main() {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(5, |s| s.parse().expect("seed count"));
    let budget: u64 = args.next().map_or(120_000, |s| s.parse().expect("budget"));
    let only: Option<u64> = args.next().map(|s| s.parse().expect("target seed"));

    for (t, n) in [(101u64, 6usize), (202, 8), (303, 10)] {
        if only.is_some_and(|o| o != t) {
            continue;
        }
        let truth = target(t, n);
        let problem = FieldData::Picture(rasterize_2d(&truth, SIZE, SIZE).unwrap());
        let mut finals = [Vec::new(), Vec::new()];
        let shared = variant(true, budget);
        let ev = Evaluator::picture(&problem).unwrap();
        let t0 = Instant::now();
        let primed = prime(
            &Model::blank(Dim::Two, shared.initial_background),
            &shared.prime,
            &ev,
        )
        .unwrap();
        println!(
            "target {t} ({n} blobs): primed {} blobs to {:.3} in {} evaluations ({:.1}s)",
            primed.model.len(),
            primed.error,
            primed.evaluations,
            t0.elapsed().as_secs_f64()
        );
        for seed in 0..seeds {
            for (k, split) in [true, false].into_iter().enumerate() {
                let cfg = SearchConfig {
                    seed,
                    ..variant(split, budget)
                };
                let ev = Evaluator::picture(&problem).unwrap();
                let t0 = Instant::now();
                let out = evolve_primed(&ev, &cfg, &primed).unwrap();
                println!(
                    "  seed {seed} {:>8}: error {:.4}, {} blobs, {} evaluations, {:.1}s",
                    if split { "split" } else { "no-split" },
                    out.error,
                    out.model.len(),
                    out.evaluations,
                    t0.elapsed().as_secs_f64()
                );
                finals[k].push(out.error);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let wins = finals[0]
            .iter()
            .zip(&finals[1])
            .filter(|(a, b)| a < b)
            .count();
        let test = rank_sum(&finals[0], &finals[1]).unwrap();
        println!(
            "target {t}: split mean {:.4} vs no-split mean {:.4}; split wins {wins}/{seeds}; p = {:.4}\n",
            mean(&finals[0]),
            mean(&finals[1]),
            test.p_value
        );
    }
}
