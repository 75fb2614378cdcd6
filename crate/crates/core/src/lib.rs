//! Solver and certification kernel for self-similar vorticity profiles on
//! annular domains.
//!
//! The profile system couples a linear transport equation for the vorticity
//! `Omega` along the characteristics of `q = perp_grad(Phi) + perp_grad(Psi_g) - mu*x`
//! with the Poisson equation `laplace(Phi) = Omega`. A fixed point of the
//! composed map is found by a frozen-Jacobian Galerkin iteration, and an
//! a posteriori constants ledger turns the computed residual into a
//! certificate that an exact solution exists within an explicit L2 distance.
//!
//! Module map:
//! - [`geometry`]: annular domains, structured polar meshes, point location.
//! - [`boundary`]: smooth boundary data (Fourier series, windowed bumps).
//! - [`linalg`]: CSR matrices, CG, dense eigen/SVD helpers.
//! - [`elliptic`]: P1 Poisson/harmonic solves, eigenpairs, projection-tail
//!   norm estimate.
//! - [`transport`]: characteristic tracing, transversality margins, transport
//!   and tangent (linearized) solves.
//! - [`galerkin`]: orthonormal basis, projection, the maps Lambda and Upsilon,
//!   the frozen Jacobian A, iteration to the limit.
//! - [`certify`]: the constants ledger, every certification inequality, and
//!   the machine-readable certificate.
//!
//! The crate is `no_std` (with `alloc`); IO and file formats live in the
//! companion CLI crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod boundary;
pub mod certify;
pub mod elliptic;
pub mod galerkin;
pub mod geometry;
pub mod linalg;
pub mod rng;
pub mod transport;
mod vec2;

pub use vec2::{Mat2, Point2};

/// Library version string.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
