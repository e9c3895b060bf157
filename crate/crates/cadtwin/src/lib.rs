//! Reconstruction of articulated, textured vehicle meshes from sparse
//! multi-view masks/images and aggregated LiDAR point clouds, by energy
//! minimization over a CAD-derived PCA shape space, plus re-simulation of
//! camera renders and LiDAR sweeps from the fitted assets.
//!
//! Module map:
//! - [`geometry`]: triangle meshes, adjacency, graph Laplacian, surface
//!   sampling, 6D rotation parameterization, OBJ/PLY io.
//! - [`vehicle`]: the articulated body + wheel parameterization and the PCA
//!   shape space over vertex-aligned templates.
//! - [`render`]: deterministic differentiable rasterizer with analytic
//!   gradients to vertices, appearance, and poses.
//! - [`energy`]: the fitting energy terms (color, mask, lidar, shape,
//!   appearance, symmetry) with values and gradients.
//! - [`optim`]: Adam / AdamUniform, Laplacian smooth reparameterization, and
//!   the three-stage fitting curriculum.
//! - [`lidar`]: BVH ray casting, sweep simulation, intensity retrieval,
//!   voxel downsampling.
//! - [`metrics`]: masked image metrics (MSE/PSNR/SSIM) and LiDAR
//!   re-simulation metrics.
//! - [`pipeline`]: scene manifests, synthetic fixture generation, asset
//!   archives, compositing.

pub mod energy;
pub mod geometry;
pub mod lidar;
pub mod metrics;
pub mod optim;
pub mod pipeline;
pub mod render;
pub mod vehicle;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("non-manifold edge ({0}, {1}): shared by more than two faces")]
    NonManifoldEdge(u32, u32),
    #[error("degenerate 6D rotation input: {0}")]
    DegenerateRotation(String),
    #[error("zero-area mesh: cannot sample surface")]
    ZeroAreaMesh,
    #[error("topology mismatch: {0}")]
    TopologyMismatch(String),
    #[error("non-finite energy in term `{term}` at iteration {iteration}")]
    NonFiniteEnergy { term: String, iteration: usize },
    #[error("optimization diverged at iteration {iteration}: energy {energy:.6e} exceeds 10x initial {initial:.6e}")]
    Diverged {
        iteration: usize,
        energy: f64,
        initial: f64,
    },
    #[error("linear solver failed to converge: residual {residual:.3e} after {iterations} iterations")]
    SolverNonConvergence { residual: f64, iterations: usize },
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("empty mask: no foreground pixels")]
    EmptyMask,
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("archive error: {0}")]
    Archive(String),
    #[error("checksum mismatch in archive entry `{0}`")]
    Checksum(String),
    #[error("unsupported archive version {found_major}.{found_minor} (supported major {supported_major})")]
    Version {
        found_major: u32,
        found_minor: u32,
        supported_major: u32,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image error: {0}")]
    Image(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
