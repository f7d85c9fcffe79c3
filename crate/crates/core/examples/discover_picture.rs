//! Picture discovery: recover a blob model from a grayscale image.
//!
//! Renders a known four-blob picture, runs the full staged search on it and
//! writes the target, the reconstruction, the model and the trace.
//!
//!     cargo run --release --example discover_picture -- [out_dir] [budget]

use std::fs;
use std::path::PathBuf;

use cellsplit::evolve::{search, SearchConfig};
use cellsplit::objective::FieldData;
use cellsplit::raster::rasterize_2d;
use cellsplit::{Blob, Dim, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "discover-out".into()));
    let budget: u64 = args.next().map_or(Ok(20_000), |s| s.parse())?;
    fs::create_dir_all(&out)?;

    let mut bar = Blob::disc(0.95, 1.0, 0.5, [0.35, 0.6], 0.08);
    bar.x_s = 0.25;
    bar.z_r = 0.2;
    let truth = Model::with_blobs(
        Dim::Two,
        0.4,
        vec![
            bar,
            Blob::disc(0.05, 0.9, 0.4, [0.7, 0.3], 0.15),
            Blob::disc(0.8, 0.6, 0.3, [0.75, 0.75], 0.1),
            Blob::disc(0.2, 0.7, 0.6, [0.25, 0.2], 0.1),
        ],
    )?;
    let target = rasterize_2d(&truth, 64, 64)?;
    target.save(&out.join("target.pgm"))?;

    let cfg = SearchConfig {
        evaluation_budget: Some(budget),
        ..SearchConfig::default()
    };
    let found = search(&FieldData::Picture(target), &cfg, None)?;

    for s in &found.trace.stages {
        println!(
            "{:>5}  evals {:>6}..{:<6}  error {:8.3} -> {:8.3}  blobs {:>2} -> {:<2}",
            s.label.as_str(),
            s.start_evaluations,
            s.end_evaluations,
            s.error_before,
            s.error_after,
            s.blobs_before,
            s.blobs_after
        );
    }
    println!(
        "final error {:.3} levels with {} blobs after {} evaluations",
        found.error,
        found.model.len(),
        found.evaluations
    );

    rasterize_2d(&found.model, 64, 64)?.save(&out.join("reconstruction.pgm"))?;
    fs::write(out.join("model.json"), found.model.to_json())?;
    found
        .trace
        .write_csv(fs::File::create(out.join("trace.csv"))?)?;
    println!("wrote {}", out.display());
    Ok(())
}
