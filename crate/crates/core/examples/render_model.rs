//! Forward sampling: a 2D model to PGM and PNG, a 3D model to a
//! resistivity mesh plus one grayscale slice per depth layer.
//!
//!     cargo run --release --example render_model -- [out_dir]

use std::fs;
use std::path::PathBuf;

use cellsplit::raster::{rasterize_2d, sample_mesh};
use cellsplit::{Blob, Dim, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(
        std::env::args()
            .nth(1)
            .unwrap_or_else(|| "render-out".into()),
    );
    fs::create_dir_all(&out)?;

    // Same blob at three sharpness levels, from diffuse to hard-edged.
    let blobs = [0.1, 0.4, 0.9]
        .iter()
        .enumerate()
        .map(|(i, &alpha)| Blob::disc(0.95, 1.0, alpha, [0.2 + 0.3 * i as f64, 0.5], 0.12))
        .collect();
    let picture = Model::with_blobs(Dim::Two, 0.2, blobs)?;
    let img = rasterize_2d(&picture, 160, 64)?;
    img.save(&out.join("sharpness.pgm"))?;
    img.save(&out.join("sharpness.png"))?;

    let mut slab = Blob::ball(0.1, 1.0, 0.5, [0.5, 0.5, 0.35], 0.15);
    slab.x_s = 0.4;
    slab.z_r = 0.25;
    let volume = Model::with_blobs(
        Dim::Three,
        0.6,
        vec![slab, Blob::ball(0.9, 0.5, 0.4, [0.3, 0.7, 0.7], 0.2)],
    )?;
    let mesh = sample_mesh(&volume, 13, 14, 10)?;
    mesh.save(&out.join("mesh.txt"))?;
    for (k, slice) in mesh.slices().iter().enumerate() {
        slice.save(&out.join(format!("slice_{k:03}.pgm")))?;
    }
    let (lo, hi) = mesh
        .values
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| {
            (lo.min(r), hi.max(r))
        });
    println!("mesh resistivity range {lo:.3}..{hi:.1} Ωm");
    println!("wrote {}", out.display());
    Ok(())
}
