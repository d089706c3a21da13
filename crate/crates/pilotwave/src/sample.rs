//! Seeded inverse-CDF sampling of grid densities.
//!
//! A draw picks a cell from the cumulative cell-mass table, then places the
//! point uniformly inside that cell, one uniform per active axis. All
//! randomness comes from one `ChaCha12` stream per call, so a `(density,
//! n, seed)` triple always reproduces the same points bit for bit.

use crate::error::{Error, Result};
use crate::field::DensityField;
use crate::scalar::Real;
use crate::stats::KahanSum;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Tolerance on `∫ρ - 1` before sampling is refused.
pub const PROBABILITY_TOL: f64 = 1e-6;

/// Inclusive prefix sums of the cell masses and their total.
pub(crate) struct CellCdf<R: Real> {
    cum: Vec<R>,
    total: R,
}

impl<R: Real> CellCdf<R> {
    pub(crate) fn new(masses: impl Iterator<Item = R>) -> Self {
        let mut acc = KahanSum::new();
        let cum: Vec<R> = masses
            .map(|m| {
                acc.add(m);
                acc.value()
            })
            .collect();
        let total = *cum.last().expect("at least one cell");
        Self { cum, total }
    }

    /// Map a uniform draw in `[0, 1)` to a cell index.
    pub(crate) fn locate(&self, u: f64) -> usize {
        let target = self.total * R::lit(u);
        self.cum.partition_point(|&c| c <= target).min(self.cum.len() - 1)
    }
}

/// Draw `n` points distributed as `rho`. Requires `∫ρ = 1` within
/// [`PROBABILITY_TOL`]; rejects `n = 0` since an empty ensemble carries no
/// statistics.
pub fn sample_density<R: Real>(rho: &DensityField<R>, n: usize, seed: u64) -> Result<Vec<[R; 2]>> {
    rho.require_probability("sample_density", PROBABILITY_TOL)?;
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let grid = rho.grid();
    let cdf = CellCdf::new(rho.values.iter().copied());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dims = grid.dims();
    // Stream layout per sample: cell draw, then one jitter per active axis.
    // Cells are centred on their sample points so the draw is unbiased with
    // respect to the node quadrature Σ f(x_i) ρ_i ΔV.
    Ok((0..n)
        .map(|_| {
            let flat = cdf.locate(rng.gen::<f64>());
            let mut p = grid.point(flat);
            for (a, x) in p.iter_mut().enumerate().take(dims) {
                *x = *x + (R::lit(rng.gen::<f64>()) - R::lit(0.5)) * grid.spacing(a);
            }
            p
        })
        .collect())
}

/// Draw `n` points from a density laid out over `copies` stacked copies of
/// `grid` (spinor sampling over position × branch). `weights` holds the
/// per-cell densities copy after copy; the returned pairs are a jittered
/// position plus the copy index the draw landed in. The stream layout
/// matches [`sample_density`]: cell draw, then one jitter per active axis.
pub fn sample_stacked<R: Real>(
    grid: &crate::grid::Grid<R>,
    weights: &[R],
    copies: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<([R; 2], usize)>> {
    if weights.len() != copies * grid.len() {
        return Err(Error::LengthMismatch { grid: copies * grid.len(), field: weights.len() });
    }
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let mass: R = crate::stats::ksum(weights.iter().copied()) * grid.cell_volume();
    if (mass - R::one()).abs() > R::lit(PROBABILITY_TOL) {
        return Err(Error::NotNormalized {
            context: "sample_stacked",
            integral: mass.as_f64(),
            tolerance: PROBABILITY_TOL,
        });
    }
    let cdf = CellCdf::new(weights.iter().copied());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let dims = grid.dims();
    Ok((0..n)
        .map(|_| {
            let flat = cdf.locate(rng.gen::<f64>());
            let (copy, cell) = (flat / grid.len(), flat % grid.len());
            let mut p = grid.point(cell);
            for (a, x) in p.iter_mut().enumerate().take(dims) {
                *x = *x + (R::lit(rng.gen::<f64>()) - R::lit(0.5)) * grid.spacing(a);
            }
            (p, copy)
        })
        .collect())
}
