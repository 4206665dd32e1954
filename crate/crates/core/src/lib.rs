//! Approximating graphs of pillow-type carpets.
//!
//! The crate builds the level-`n` graphs `V_n` of a carpet described by a piling
//! multiplicity, and computes on them: natural graph energies, effective
//! resistances, Schur-complement traces, pre-extension kernels and the
//! coarse-to-fine extension operator. On top of that it tabulates the corner
//! and border resistance sequences and checks the multiplicative resistance
//! estimates numerically.

pub mod carpet;
pub mod energy;
pub mod error;
pub mod extension;
pub mod io;
pub mod pattern;
pub mod scaling;
pub mod trace;
pub mod verify;
pub mod walk;
pub mod words;

pub use error::{CarpetError, Result};

/// Crate version, recorded in exported metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
