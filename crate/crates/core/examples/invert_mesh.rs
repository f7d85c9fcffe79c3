//! 3D inversion against the built-in synthetic forward model.
//!
//! Samples a two-body resistivity model onto a 13×14×10 mesh, simulates
//! station responses, then searches for a model that explains them.
//!
//!     cargo run --release --example invert_mesh -- [budget] [seed]

use cellsplit::evolve::{search, SearchConfig};
use cellsplit::objective::{
    FieldData, MeshDims, ResponseData, SyntheticForward, DEFAULT_ABSOLUTE_NOISE,
    DEFAULT_RELATIVE_NOISE,
};
use cellsplit::raster::sample_mesh;
use cellsplit::{Blob, Dim, Model};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let budget: u64 = args.next().map_or(Ok(30_000), |s| s.parse())?;
    let seed: u64 = args.next().map_or(Ok(0), |s| s.parse())?;

    let dims = MeshDims {
        nx: 13,
        ny: 14,
        nz: 10,
    };
    let truth = Model::with_blobs(
        Dim::Three,
        0.65,
        vec![
            Blob::ball(0.45, 1.0, 0.4, [0.3, 0.4, 0.3], 0.2),
            Blob::ball(0.95, 0.8, 0.4, [0.7, 0.6, 0.5], 0.25),
        ],
    )?;
    let forward = SyntheticForward::new(dims);
    let mesh = sample_mesh(&truth, dims.nx, dims.ny, dims.nz)?;
    let data = ResponseData::with_noise_floor(
        forward.forward(&mesh),
        DEFAULT_RELATIVE_NOISE,
        DEFAULT_ABSOLUTE_NOISE,
    )?;
    println!(
        "{} responses from {} cells",
        data.values.len(),
        dims.cells()
    );

    let cfg = SearchConfig {
        evaluation_budget: Some(budget),
        seed,
        ..SearchConfig::default()
    };
    let found = search(&FieldData::Mesh { dims, data }, &cfg, Some(&forward))?;
    println!(
        "RMS {:.3} with {} blobs after {} evaluations",
        found.error,
        found.model.len(),
        found.evaluations
    );
    for b in &found.model.blobs {
        let c = b.center();
        println!(
            "  δ {:.2}  s {:.2}  center ({:.2}, {:.2}, {:.2})  axes {:.2?}",
            b.delta,
            b.s,
            c[0],
            c[1],
            c[2],
            b.semi_axes()
        );
    }
    Ok(())
}
