//! Fusion of sparse point observations with a dense gridded proxy.
//!
//! The focal field `L` is observed directly (with error) at a few sites, and
//! indirectly through a proxy `A = φ + β₁ L + e` on a grid, where `φ` is an
//! intrinsic GMRF discrepancy. The latent fields and regression coefficients
//! are integrated out analytically, leaving a low-dimensional posterior over
//! variance components, `κ`, and `β₁` that is explored by adaptive blocked
//! Metropolis.

pub mod build;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod fusion;
pub mod grid;
pub mod linalg;
pub mod mcmc;
pub mod mrf;
pub mod model;
pub mod par;
pub mod sim;
pub mod splines;
pub mod study;

pub use error::{Error, ErrorCategory, Result};
