//! Homogenization toolkit for 1-3 piezoelectric composites.
//!
//! The crate computes effective material tensors of a two-phase piezoelectric
//! composite by two routes: sampling-box cell problems with affine Dirichlet
//! data (the multiscale estimator) and periodic cell problems on the unit
//! period (classical homogenization). On top of that it runs the coupled
//! macroscopic solve with the extracted tensors, builds first-order corrector
//! fields, and measures convergence orders of the sampling-box estimate
//! against the periodic reference.
//!
//! Module map:
//! - [`materials`]: Voigt-notation tensor sets, the coupled 9x9 constitutive
//!   matrix, symmetry/positivity checks.
//! - [`grid`]: structured voxel cells, sampling-box extraction, periodic
//!   node pairing, degree-of-freedom constraints.
//! - [`fem`]: trilinear hexahedral element matrices, assembly, and the
//!   saddle-point linear solvers (direct block LDL^T and preconditioned
//!   MINRES).
//! - [`cells`]: the two cell-problem families, effective-tensor extraction,
//!   first-order correctors.
//! - [`macroscale`]: the macroscopic coupled solve and the four-step
//!   multiscale pipeline.
//! - [`verify`]: error metrics, order estimation, analytic oracles, resolved
//!   micro reference solves.
//! - [`cli`]: config parsing and the batch subcommands (behind the `cli`
//!   feature).

pub mod cells;
#[cfg(feature = "cli")]
pub mod cli;
mod error;
pub mod fem;
pub mod grid;
mod linalg;
pub mod macroscale;
pub mod materials;
pub mod verify;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
