//! Numerical toolkit for exterior Navier-Stokes asymptotics: Landau solutions,
//! the Oseen tensor, space-time potentials, force decomposition, boundary
//! extension, momentum-flux extraction and a Picard solver for perturbed flows.
//!
//! Every routine is generic over [`Real`] (`f32` or `f64`); the `f64`
//! aliases at the crate root are what the CLI and the verification suites use.

pub mod decomp;
pub mod error;
pub mod fields;
pub mod flux;
pub mod landau;
pub mod linalg;
pub mod oseen;
pub mod perturbed;
pub mod potentials;
pub mod quadrature;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use fields::{Field, FieldHandle, FieldValue};
pub use linalg::{Mat3, Vec3};
pub use scalar::Real;

/// Double-precision vector.
pub type Vec3d = Vec3<f64>;
/// Double-precision matrix.
pub type Mat3d = Mat3<f64>;
/// Double-precision spherical grid.
pub type Grid = fields::RadialSphericalGrid<f64>;
/// Double-precision Landau solution.
pub type Landau = landau::LandauSolution<f64>;
/// Double-precision perturbed problem.
pub type Perturbed = perturbed::PerturbedProblem<f64>;
