//! Spectral laboratory for conformal deformations of flat tori.
//!
//! The crate computes the exact Laplace spectrum of a flat torus
//! `T^n = R^n / Γ`, evaluates first- and second-variation operators of the
//! scale-invariant eigenvalue functional `λ̄_k(g) = λ_k(g) · Vol(g)^{2/n}`
//! along conformal deformations `g_t = e^{φt} g`, and cross-validates the
//! results against an independent Fourier–Galerkin discretization of the
//! genuinely deformed eigenproblem.
//!
//! Module map:
//! - [`lattice`]: dual lattices, eigenvalue shells, shortest vectors, the
//!   conformal upper bound.
//! - [`trig`]: exact algebra of real trigonometric polynomials (products,
//!   gradient pairings, Laplacian, projections) over a generic coefficient
//!   field.
//! - [`exact`]: the roundoff-free coefficient backend (rationals carrying
//!   symbolic powers of `4π²`, `√2` and `|det A|`).
//! - [`perturbation`]: admissibility, the first-variation operator, the
//!   second-variation operators `S` and `T`, and the Taylor coefficient `α`.
//! - [`solver`]: Galerkin discretization of the deformed metric, eigenvalue
//!   branch tracking and derivative fits.
//! - [`casework`]: closed-form analysis of the first eigenvalue under the
//!   unique-shortest-dual-vector hypothesis, replayed in exact arithmetic.
//! - [`report`]/[`cli`]: machine-readable bundles and the command-line
//!   driver.

#![allow(clippy::needless_range_loop)]

pub mod casework;
pub mod cli;
pub mod error;
pub mod exact;
pub mod lattice;
pub mod perturbation;
pub mod report;
pub mod solver;
pub mod tolerances;
pub mod trig;

pub use error::{Error, Result};
