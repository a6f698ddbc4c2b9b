//! Implicit dynamical low-rank solver for 1D3V kinetic equations with
//! stiff Fokker–Planck collisions.
//!
//! The distribution at every spatial point is a rank-`(r1, r2)` tensor
//! train over the three velocity directions. Each time step advances it
//! through five projector-splitting substeps whose implicit parts reduce to
//! Sylvester equations with one tridiagonal factor.

pub mod dense;
pub mod domain;
pub mod error;
pub mod experiments;
pub mod fp_operator;
pub mod init;
pub mod integrator;
pub mod moments;
#[cfg(feature = "oracle")]
pub mod oracle;
pub mod snapshot;
pub mod sylvester;
pub mod transport;
pub mod tt;

pub use error::{Error, Result};
