//! Complex scalar fields on a grid: wavefunctions, probability densities,
//! and masked real-valued diagnostics derived from them.

use crate::error::{Error, Result};
use crate::grid::{Grid, SpectralOp};
use crate::scalar::{cr, Real, C};
use crate::stats::ksum;

/// Tolerance on `‖ψ‖ - 1` after construction or renormalisation.
pub const NORM_TOL: f64 = 1e-9;

/// A normalised wavefunction sampled on a grid, carrying the physical
/// constants of its evolution (`ħ` and one mass per axis).
#[derive(Debug, Clone)]
pub struct WaveFunction<R: Real> {
    grid: Grid<R>,
    pub values: Vec<C<R>>,
    pub time: R,
    pub hbar: R,
    pub mass: [R; 2],
}

impl<R: Real> WaveFunction<R> {
    /// Wrap raw samples and normalise them. Rejects non-finite input and
    /// fields that vanish identically.
    pub fn new(grid: Grid<R>, values: Vec<C<R>>, hbar: R, mass: [R; 2], time: R) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { grid: grid.len(), field: values.len() });
        }
        for (idx, v) in values.iter().enumerate() {
            if !v.re.is_finite() || !v.im.is_finite() {
                return Err(Error::NonFinite { context: "wavefunction", index: idx });
            }
        }
        let mut psi = Self { grid, values, time, hbar, mass };
        psi.normalize()?;
        Ok(psi)
    }

    /// Sample a closure over the grid points and normalise.
    pub fn from_fn(
        grid: Grid<R>,
        hbar: R,
        mass: [R; 2],
        f: impl Fn([R; 2]) -> C<R>,
    ) -> Result<Self> {
        let values = (0..grid.len()).map(|flat| f(grid.point(flat))).collect();
        Self::new(grid, values, hbar, mass, R::zero())
    }

    pub fn grid(&self) -> &Grid<R> {
        &self.grid
    }

    /// L² norm `√(Σ |ψ|² ΔV)`.
    pub fn norm(&self) -> R {
        (ksum(self.values.iter().map(|v| v.norm_sqr())) * self.grid.cell_volume()).sqrt()
    }

    /// Rescale to unit norm.
    pub fn normalize(&mut self) -> Result<()> {
        let norm = self.norm();
        if !(norm.as_f64() > 1e-30) {
            return Err(Error::ZeroNorm { norm: norm.as_f64() });
        }
        let inv = cr(R::one() / norm);
        for v in &mut self.values {
            *v = *v * inv;
        }
        Ok(())
    }

    /// Inner product `<self, other> = Σ self* · other · ΔV`.
    pub fn inner(&self, other: &Self) -> C<R> {
        debug_assert_eq!(self.grid, other.grid);
        let re = ksum(self.values.iter().zip(&other.values).map(|(a, b)| (a.conj() * b).re));
        let im = ksum(self.values.iter().zip(&other.values).map(|(a, b)| (a.conj() * b).im));
        C::new(re, im) * cr(self.grid.cell_volume())
    }

    /// Probability density `|ψ|²`.
    pub fn density(&self) -> DensityField<R> {
        DensityField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.norm_sqr()).collect(),
        }
    }

    /// Spectral gradient, one component per active axis.
    pub fn gradient_with(&self, op: &SpectralOp<R>) -> Vec<Vec<C<R>>> {
        (0..self.grid.dims()).map(|a| op.derivative_axis(&self.values, a)).collect()
    }

    /// Spectral gradient with a freshly planned transform (convenience path;
    /// evolution loops reuse a cached [`SpectralOp`] instead).
    pub fn gradient(&self) -> Vec<Vec<C<R>>> {
        self.gradient_with(&SpectralOp::new(&self.grid))
    }

    /// `<X_a>` for each active axis.
    pub fn expectation_position(&self) -> Vec<R> {
        let rho = self.density();
        (0..self.grid.dims())
            .map(|a| {
                ksum((0..self.grid.len()).map(|f| self.grid.point(f)[a] * rho.values[f]))
                    * self.grid.cell_volume()
            })
            .collect()
    }

    /// `<P_a>` for each active axis, evaluated on the wavenumber lattice.
    pub fn expectation_momentum(&self) -> Vec<R> {
        let op = SpectralOp::new(&self.grid);
        let mut hat = self.values.clone();
        op.transform(&mut hat, crate::grid::Direction::Forward);
        let total = ksum(hat.iter().map(|v| v.norm_sqr()));
        let ny = self.grid.points(1);
        (0..self.grid.dims())
            .map(|a| {
                let k = op.wavenumbers(a);
                let weighted = ksum(hat.iter().enumerate().map(|(flat, v)| {
                    let idx = if a == 0 { flat / ny } else { flat % ny };
                    k[idx] * v.norm_sqr()
                }));
                self.hbar * weighted / total
            })
            .collect()
    }
}

/// Density-standard-deviation Gaussian packet specification: `|ψ|²` has
/// standard deviation `sigma` per axis, and the phase carries momentum `p`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianSpec<R: Real> {
    pub center: [R; 2],
    pub sigma: [R; 2],
    pub momentum: [R; 2],
}

impl<R: Real> GaussianSpec<R> {
    pub fn one_d(center: R, sigma: R, momentum: R) -> Self {
        Self {
            center: [center, R::zero()],
            sigma: [sigma, R::one()],
            momentum: [momentum, R::zero()],
        }
    }

    /// Unnormalised amplitude at a point (normalisation happens grid-side).
    pub fn amplitude(&self, dims: usize, hbar: R, x: [R; 2]) -> C<R> {
        let mut log_mag = R::zero();
        let mut phase = R::zero();
        let quarter = R::lit(0.25);
        for a in 0..dims {
            let d = x[a] - self.center[a];
            log_mag = log_mag - quarter * d * d / (self.sigma[a] * self.sigma[a]);
            phase = phase + self.momentum[a] * x[a] / hbar;
        }
        C::from_polar(log_mag.exp(), phase)
    }
}

/// Normalised Gaussian packet on a grid.
pub fn gaussian_packet<R: Real>(
    grid: Grid<R>,
    hbar: R,
    mass: [R; 2],
    spec: GaussianSpec<R>,
) -> Result<WaveFunction<R>> {
    let dims = grid.dims();
    WaveFunction::from_fn(grid, hbar, mass, |x| spec.amplitude(dims, hbar, x))
}

/// Normalised superposition of Gaussian packets with complex coefficients.
pub fn packet_superposition<R: Real>(
    grid: Grid<R>,
    hbar: R,
    mass: [R; 2],
    parts: &[(C<R>, GaussianSpec<R>)],
) -> Result<WaveFunction<R>> {
    let dims = grid.dims();
    WaveFunction::from_fn(grid, hbar, mass, |x| {
        parts
            .iter()
            .map(|(c, spec)| *c * spec.amplitude(dims, hbar, x))
            .fold(C::new(R::zero(), R::zero()), |acc, v| acc + v)
    })
}

/// Nonnegative real density on a grid.
#[derive(Debug, Clone)]
pub struct DensityField<R: Real> {
    grid: Grid<R>,
    pub values: Vec<R>,
}

impl<R: Real> DensityField<R> {
    pub fn new(grid: Grid<R>, values: Vec<R>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { grid: grid.len(), field: values.len() });
        }
        for (idx, v) in values.iter().enumerate() {
            if !v.is_finite() || *v < R::zero() {
                return Err(Error::NonFinite { context: "density", index: idx });
            }
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Grid<R> {
        &self.grid
    }

    /// Riemann integral `Σ ρ ΔV`.
    pub fn integral(&self) -> R {
        ksum(self.values.iter().copied()) * self.grid.cell_volume()
    }

    /// Error unless the density integrates to 1 within `tol`.
    pub fn require_probability(&self, context: &'static str, tol: f64) -> Result<()> {
        let integral = self.integral().as_f64();
        if (integral - 1.0).abs() > tol {
            return Err(Error::NotNormalized { context, integral, tolerance: tol });
        }
        Ok(())
    }

    /// Probability mass within `cells` cells of any box edge, along active
    /// axes. Serves as the leakage guard for periodic evolutions.
    pub fn boundary_mass(&self, cells: usize) -> R {
        let g = &self.grid;
        let near = |idx: usize, n: usize| idx < cells || idx + cells >= n;
        let mass = ksum((0..g.len()).filter_map(|flat| {
            let (ix, iy) = g.split(flat);
            let mut hit = near(ix, g.points(0));
            if g.dims() == 2 {
                hit = hit || near(iy, g.points(1));
            }
            hit.then(|| self.values[flat])
        }));
        mass * g.cell_volume()
    }
}

/// Real diagnostic field with a validity mask (`true` = trustworthy cell).
/// Cells too close to wavefunction nodes are masked out by the producers.
#[derive(Debug, Clone)]
pub struct MaskedField<R: Real> {
    pub grid: Grid<R>,
    pub values: Vec<R>,
    pub mask: Vec<bool>,
}

impl<R: Real> MaskedField<R> {
    /// Maximum |value| over unmasked cells.
    pub fn max_abs_valid(&self) -> R {
        self.values
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m)
            .map(|(v, _)| v.abs())
            .fold(R::zero(), R::max)
    }
}
