//! Cone-beam CT toolkit: acquisition geometry, a matched Joseph projector,
//! phantoms and dose simulation, least-squares and analytic reconstruction,
//! sinogram/image enhancement, and the end-to-end evaluation pipeline.

pub mod arrays;
pub mod enhance;
pub mod error;
pub mod geometry;
pub mod noise;
pub mod phantoms;
pub mod pipeline;
pub mod projector;
pub mod solvers;

pub use arrays::{mse, psnr, ArrayKind, CtArray, Grid3, Sinogram, Volume};
pub use error::{Error, Result};
pub use geometry::{ConeBeamGeometry, GeometryParams};
pub use noise::{simulate_dose, DoseModel, DosePreset};
pub use projector::{operator_norm_sq, DenseMatrix, LinearOperator, SystemOperator};
pub use solvers::{LsSolverConfig, Method, SolverReport, Termination};
