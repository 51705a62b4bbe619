//! Fully discrete 1-D heat equation with dynamic boundary conditions.
//!
//! Staggered primal/dual meshes, discrete calculus with summation by parts,
//! implicit forward and adjoint solvers, Carleman weights and term-by-term
//! Carleman evaluation, relaxed observability diagnostics and penalized HUM
//! control synthesis.

pub mod calculus;
pub mod carleman;
pub mod error;
pub mod hum;
pub mod mesh;
pub mod rng;
pub mod solver;
pub mod tridiag;
pub mod weights;

pub use error::{Error, Result};
