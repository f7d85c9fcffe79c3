//! Plugging in an external forward solver through the file exchange.
//!
//! The "solver" here is a small awk script that reports each depth layer's
//! mean log10 resistivity. A real setup would point the command at an MT
//! code that reads `mesh.txt` and writes `response.txt` and `status.txt`.
//!
//!     cargo run --release --example external_solver

#[cfg(unix)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    use std::fs;
    use std::os::unix::fs::PermissionsExt;
    use std::time::Duration;

    use cellsplit::evolve::{search, SearchConfig};
    use cellsplit::objective::{ExternalForward, FieldData, ForwardModel, MeshDims, ResponseData};
    use cellsplit::prime::PrimeConfig;
    use cellsplit::raster::sample_mesh;
    use cellsplit::{Blob, Dim, Model};

    let dir = std::env::temp_dir().join(format!("cellsplit-external-{}", std::process::id()));
    fs::create_dir_all(&dir)?;
    let solver = dir.join("layers.sh");
    fs::write(
        &solver,
        r#"#!/bin/sh
awk 'NR == 1 { nx = $1; ny = $2; nz = $3; next }
{ for (i = 1; i <= NF; i++) { k = int(n / (nx * ny)); s[k] += log($i) / log(10); n++ } }
END { for (k = 0; k < nz; k++) printf "%.17g\n", s[k] / (nx * ny) }' mesh.txt > response.txt
echo OK > status.txt
"#,
    )?;
    fs::set_permissions(&solver, fs::Permissions::from_mode(0o755))?;

    let dims = MeshDims {
        nx: 6,
        ny: 6,
        nz: 8,
    };
    let forward = ExternalForward::new(
        dir.join("exchange"),
        solver.to_str().ok_or("non-UTF-8 temp path")?,
        dims.nz,
        Some(Duration::from_secs(10)),
    )?;
    let truth = Model::with_blobs(
        Dim::Three,
        0.6,
        vec![Blob::ball(0.95, 1.0, 0.5, [0.5, 0.5, 0.4], 0.3)],
    )?;
    let mesh = sample_mesh(&truth, dims.nx, dims.ny, dims.nz)?;
    let data = ResponseData::with_noise_floor(forward.respond(&mesh)?, 0.05, 1e-3)?;
    println!("layer responses: {:.3?}", data.values);

    let cfg = SearchConfig {
        num_rounds: 1,
        split_count: 1,
        evaluation_budget: Some(3000),
        prime: PrimeConfig {
            scan_grid: 3,
            max_blobs: Some(1),
            ..PrimeConfig::default()
        },
        ..SearchConfig::default()
    };
    let found = search(&FieldData::Mesh { dims, data }, &cfg, Some(&forward))?;
    println!(
        "RMS {:.3} after {} solver calls, {} blobs",
        found.error,
        found.evaluations,
        found.model.len()
    );
    fs::remove_dir_all(&dir)?;
    Ok(())
}

#[cfg(not(unix))]
fn main() {
    eprintln!("this example drives a shell script and needs a unix system");
}
