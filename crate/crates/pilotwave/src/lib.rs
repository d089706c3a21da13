//! Pilot-wave dynamics on spectral grids.
//!
//! The crate co-evolves wave equations (scalar and two-component) with
//! ensembles of guided trajectories and provides the verification checks
//! that tie the two descriptions together: equivariance of the trajectory
//! ensemble with the evolving density, ensemble averages against operator
//! expectations, outcome frequencies against squared amplitudes, and the
//! classical Hamilton–Jacobi limit.
//!
//! Everything is generic over the floating-point scalar through
//! [`scalar::Real`]; the `*64` aliases below fix the `f64` instantiations
//! used by the committed tolerances.

pub mod error;
pub mod scalar;

pub mod grid;
pub mod stats;

pub mod field;
pub mod sample;

pub mod schrodinger;

pub mod bohm;

pub mod hj;

pub mod pauli;

pub mod measurement;

pub mod io;

pub use error::{Error, Result};
pub use scalar::{Real, C};

/// `f64` grid.
pub type Grid64 = grid::Grid<f64>;
/// `f64` wavefunction.
pub type WaveFunction64 = field::WaveFunction<f64>;
/// `f64` probability density.
pub type DensityField64 = field::DensityField<f64>;
