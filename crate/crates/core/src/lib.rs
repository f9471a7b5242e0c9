//! Reconstruction of the two spatially varying coefficients rho(x) and p(x)
//! of the 2-D acoustic wave equation
//!
//! ```text
//!     rho(x) u_tt - div(p(x) grad u) = 0
//! ```
//!
//! from noisy backscattered boundary observations, by adjoint-state
//! conjugate-gradient minimization of a Tikhonov functional, together with
//! numerical evaluation of the Carleman-weight stability constants and
//! admissibility conditions that back the reconstruction theory.
//!
//! The crate is `no_std` (with `alloc`): it contains the grid, the forward
//! and adjoint solvers, the optimizer, mesh refinement and the stability
//! toolbox, but no IO. File formats, configuration and the command-line
//! front end live in the companion `rhop-cli` crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
#[macro_use]
extern crate std;

pub mod adjoint;
pub mod error;
pub mod field;
pub mod grid;
pub mod optim;
pub mod refine;
pub mod stability;
pub mod synth;
pub mod wave;

pub use error::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;
