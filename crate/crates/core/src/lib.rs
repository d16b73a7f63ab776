//! Random perforated domains and the discrete cell problems of their
//! homogenized free-discontinuity energies.
//!
//! The crate is organised bottom-up:
//!
//! - [`geometry`] generates δ-separated random ball packings and computes
//!   exact continuum densities.
//! - [`discretize`] rasterizes a window onto a regular grid and evaluates
//!   the discrete volume, surface and Mumford–Shah energies.
//! - [`solvers`] minimizes those energies: conjugate gradients and a
//!   first-order descent for the Sobolev problem, max-flow/min-cut for the
//!   partition problem, plus brute-force oracles for small instances.
//! - [`extension`] fills fields into the holes with controlled energy.
//! - [`homogenize`] runs t- and k-ladders over seeded realizations and
//!   checks the structural properties of the effective densities.

pub mod discretize;
pub mod error;
pub mod extension;
pub mod geometry;
pub mod homogenize;
pub mod solvers;

pub use error::{Error, Result};
