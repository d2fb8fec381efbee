//! Correspondence-free point cloud registration by functional least squares.
//!
//! A point cloud is lifted to a delta mixture and projected onto a truncated
//! orthonormal cosine basis; registration then minimizes the Sobolev-weighted
//! distance between the coefficient vectors of the transformed source and the
//! target. No point correspondences are ever formed, which makes the method
//! robust to density differences, shuffling, and unknown relative scale.
//!
//! Entry points:
//! - [`register`] — pose estimation with known scale
//! - [`register_with_unknown_scale`] — scale from TRIMs, then pose
//! - [`icp::refine`] — optional local ICP polish of an FLS estimate
//! - [`bench`] — synthetic perturbation benchmark harness behind the CLI

pub mod basis;
pub mod bench;
pub mod cloud;
pub mod error;
pub mod icp;
pub mod io;
pub mod kdtree;
pub mod registration;
pub mod scale;
pub mod so3;
pub mod solver;
mod sum;
pub mod transform;

pub use basis::{coefficients, delta_distance_sq, BasisSpec, CoefficientVector};
pub use cloud::{normalize_to_unit_cube, PointCloud};
pub use error::{Error, Result};
pub use registration::{register, FlsConfig, RegistrationResult};
pub use scale::{estimate_scale, register_with_unknown_scale, trims, ScaleOptions, TrimSet};
pub use solver::{solve, LeastSquaresProblem, SolverOptions, SolverReport};
pub use transform::{rotation_error_deg, translation_error, SimilarityTransform};
