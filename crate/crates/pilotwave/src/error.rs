//! Crate-wide error type. Numerical guards fail loudly with the measured
//! value and the limit that was violated, so a bad configuration is
//! diagnosable from the message alone.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("grid axis {axis} has {points} points; at least 16 are required")]
    GridTooSmall { axis: usize, points: usize },

    #[error("grid axis {axis} extent must be positive and finite, got {extent}")]
    BadExtent { axis: usize, extent: f64 },

    #[error("expected a {expected}D grid, got {got}D")]
    DimsMismatch { expected: usize, got: usize },

    #[error("field and grid disagree: grid has {grid} cells, field has {field}")]
    LengthMismatch { grid: usize, field: usize },

    #[error("{context}: non-finite value at cell {index}")]
    NonFinite { context: &'static str, index: usize },

    #[error("cannot normalise: L2 norm is {norm}, too close to zero")]
    ZeroNorm { norm: f64 },

    #[error("{context}: density integrates to {integral}, expected 1 within {tolerance}")]
    NotNormalized { context: &'static str, integral: f64, tolerance: f64 },

    #[error("duration {duration} is not an integer multiple of dt {dt}")]
    TimeStepMismatch { duration: f64, dt: f64 },

    #[error("dt must be positive and finite, got {dt}")]
    BadTimeStep { dt: f64 },

    #[error("sample count must be positive")]
    EmptyEnsemble,

    #[error("quadratic phase coefficient |a| exceeded {limit:.3e} at t = {time:.6} (caustic); stop before the focusing time")]
    CausticReached { time: f64, limit: f64 },

    #[error("phase unwrap failed near cell {index}: jump of {jump:.3} rad between adjacent cells; the region is too close to a node")]
    PhaseUnwrap { index: usize, jump: f64 },

    #[error("outcome packets {first} and {second} overlap: |<ψ_{first}, ψ_{second}>| = {overlap:.3e} exceeds {limit:.1e}; separate the centres or shrink the widths")]
    PacketOverlap { first: usize, second: usize, overlap: f64, limit: f64 },

    #[error("coefficients are not normalised: Σ|c|² = {sum}, expected 1 within {tolerance}")]
    BadCoefficients { sum: f64, tolerance: f64 },

    #[error("{context}: {mass:.3e} of the probability mass sits within {cells} cells of the boundary; enlarge the box")]
    BoundaryMass { context: &'static str, mass: f64, cells: usize },

    #[error("{0}")]
    Unsupported(&'static str),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("malformed field file at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
