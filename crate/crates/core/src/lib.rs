//! Staged stochastic inversion over diffuse-ellipse ("blob") models.
//!
//! A model is a background value plus a list of blobs. The search primes the
//! model greedily, refines it with CMA-ES and then alternates culling,
//! cell-division splitting and further CMA-ES stages. The same machinery
//! fits 2D grayscale pictures and 3D resistivity meshes behind a pluggable
//! forward model.

pub mod cli;
pub mod cmaes;
pub mod error;
pub mod evolve;
pub mod model;
pub mod objective;
pub mod prime;
pub mod raster;
pub mod stats;

pub use error::{Error, ForwardError, Result};
pub use model::{Blob, Dim, Genome, Model};
