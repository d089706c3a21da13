//! Uniform periodic grids (1D and 2D) and the spectral operators on them.
//!
//! A grid covers the centred box `[-L_a/2, L_a/2)` per axis with `n_a` cells;
//! the dual wavenumber lattice is the standard DFT one, `k_j = 2π j / L` with
//! `j` wrapped to `(-n/2, n/2]`. Storage is row-major with the last axis
//! contiguous: `flat = ix * ny + iy`.

use crate::error::{Error, Result};
use crate::scalar::{cr, i, Real, C};
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Minimum points per axis; fewer leaves no room for a band-limited packet.
pub const MIN_POINTS_PER_AXIS: usize = 16;

/// Uniform periodic grid over a centred box, one or two axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<R: Real> {
    dims: usize,
    points: [usize; 2],
    extent: [R; 2],
}

impl<R: Real> Grid<R> {
    /// 1D grid with `n` cells over extent `l`.
    pub fn line(n: usize, l: R) -> Result<Self> {
        Self::build(1, [n, 1], [l, R::one()])
    }

    /// 2D grid with `nx × ny` cells over extents `lx × ly`.
    pub fn plane(nx: usize, ny: usize, lx: R, ly: R) -> Result<Self> {
        Self::build(2, [nx, ny], [lx, ly])
    }

    fn build(dims: usize, points: [usize; 2], extent: [R; 2]) -> Result<Self> {
        for axis in 0..dims {
            if points[axis] < MIN_POINTS_PER_AXIS {
                return Err(Error::GridTooSmall { axis, points: points[axis] });
            }
            if !(extent[axis] > R::zero()) || !extent[axis].is_finite() {
                return Err(Error::BadExtent { axis, extent: extent[axis].as_f64() });
            }
        }
        Ok(Self { dims, points, extent })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    /// Cells along `axis` (1 for the unused axis of a 1D grid).
    pub fn points(&self, axis: usize) -> usize {
        self.points[axis]
    }

    pub fn extent(&self, axis: usize) -> R {
        self.extent[axis]
    }

    /// Total number of cells.
    pub fn len(&self) -> usize {
        self.points[0] * self.points[1]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Cell spacing along `axis`.
    pub fn spacing(&self, axis: usize) -> R {
        self.extent[axis] / R::from_usize(self.points[axis]).unwrap()
    }

    /// Volume element `∏ Δx_a` over the active axes.
    pub fn cell_volume(&self) -> R {
        (0..self.dims).map(|a| self.spacing(a)).fold(R::one(), |p, d| p * d)
    }

    /// Coordinate of cell `index` along `axis`: left edge of the box plus
    /// `index` spacings (cell-edge sampling, matching the DFT convention).
    pub fn coord(&self, axis: usize, index: usize) -> R {
        let half = self.extent[axis] / R::lit(2.0);
        -half + self.spacing(axis) * R::from_usize(index).unwrap()
    }

    /// Coordinates of a flat cell index; the second entry is 0 on 1D grids.
    pub fn point(&self, flat: usize) -> [R; 2] {
        let (ix, iy) = self.split(flat);
        let y = if self.dims == 2 { self.coord(1, iy) } else { R::zero() };
        [self.coord(0, ix), y]
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        ix * self.points[1] + iy
    }

    pub fn split(&self, flat: usize) -> (usize, usize) {
        (flat / self.points[1], flat % self.points[1])
    }

    /// DFT wavenumbers along `axis`, index-aligned with the transform output.
    pub fn wavenumbers(&self, axis: usize) -> Vec<R> {
        let n = self.points[axis];
        let step = R::lit(2.0) * R::PI() / self.extent[axis];
        (0..n)
            .map(|j| {
                let signed = if j <= n / 2 { j as i64 } else { j as i64 - n as i64 };
                step * R::from_i64(signed).unwrap()
            })
            .collect()
    }

    /// Whether a position lies inside the box on every active axis.
    pub fn contains(&self, x: [R; 2]) -> bool {
        let half = |a: usize| self.extent[a] / R::lit(2.0);
        (0..self.dims).all(|a| x[a] >= -half(a) && x[a] <= half(a))
    }

    /// Fractional cell coordinate along `axis` for periodic interpolation:
    /// returns the cell whose left sample bounds `x` and the offset in it.
    pub fn locate(&self, axis: usize, x: R) -> (usize, R) {
        let n = self.points[axis];
        let half = self.extent[axis] / R::lit(2.0);
        let u = (x + half) / self.spacing(axis);
        let floor = u.floor();
        let frac = u - floor;
        let idx = floor.as_f64() as i64;
        let wrapped = idx.rem_euclid(n as i64) as usize;
        (wrapped, frac)
    }
}

/// Direction of a Fourier transform pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    Inverse,
}

/// Cached FFT plans and wavenumbers for one grid.
///
/// All state is immutable after construction; methods take `&self` and are
/// safe to call from parallel trajectory workers.
pub struct SpectralOp<R: Real> {
    grid: Grid<R>,
    fwd: [Arc<dyn Fft<R>>; 2],
    inv: [Arc<dyn Fft<R>>; 2],
    k: [Vec<R>; 2],
}

impl<R: Real> SpectralOp<R> {
    pub fn new(grid: &Grid<R>) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = [
            planner.plan_fft_forward(grid.points(0)),
            planner.plan_fft_forward(grid.points(1)),
        ];
        let inv = [
            planner.plan_fft_inverse(grid.points(0)),
            planner.plan_fft_inverse(grid.points(1)),
        ];
        let k = [grid.wavenumbers(0), grid.wavenumbers(1)];
        Self { grid: grid.clone(), fwd, inv, k }
    }

    pub fn grid(&self) -> &Grid<R> {
        &self.grid
    }

    pub fn wavenumbers(&self, axis: usize) -> &[R] {
        &self.k[axis]
    }

    /// In-place transform along one axis. Inverse passes carry the `1/n`
    /// normalisation so that inverse ∘ forward is the identity.
    pub fn transform_axis(&self, data: &mut [C<R>], axis: usize, dir: Direction) {
        let n = self.grid.points(axis);
        if n == 1 {
            return;
        }
        debug_assert_eq!(data.len(), self.grid.len());
        let plan = match dir {
            Direction::Forward => &self.fwd[axis],
            Direction::Inverse => &self.inv[axis],
        };
        if axis == 1 {
            // Rows are contiguous; the plan processes every row in one call.
            plan.process(data);
        } else {
            let ny = self.grid.points(1);
            let mut column = vec![C::<R>::default(); n];
            for iy in 0..ny {
                for ix in 0..n {
                    column[ix] = data[ix * ny + iy];
                }
                plan.process(&mut column);
                for ix in 0..n {
                    data[ix * ny + iy] = column[ix];
                }
            }
        }
        if dir == Direction::Inverse {
            let scale = cr(R::one() / R::from_usize(n).unwrap());
            for v in data.iter_mut() {
                *v = *v * scale;
            }
        }
    }

    /// Full transform over all active axes.
    pub fn transform(&self, data: &mut [C<R>], dir: Direction) {
        for axis in 0..self.grid.dims() {
            self.transform_axis(data, axis, dir);
        }
    }

    /// Spectral partial derivative along `axis`.
    pub fn derivative_axis(&self, values: &[C<R>], axis: usize) -> Vec<C<R>> {
        let mut hat = values.to_vec();
        self.transform_axis(&mut hat, axis, Direction::Forward);
        let ny = self.grid.points(1);
        for (flat, v) in hat.iter_mut().enumerate() {
            let idx = if axis == 0 { flat / ny } else { flat % ny };
            *v = *v * i() * cr(self.k[axis][idx]);
        }
        self.transform_axis(&mut hat, axis, Direction::Inverse);
        hat
    }

    /// Spectral Laplacian over all active axes.
    pub fn laplacian(&self, values: &[C<R>]) -> Vec<C<R>> {
        let mut hat = values.to_vec();
        self.transform(&mut hat, Direction::Forward);
        let ny = self.grid.points(1);
        for (flat, v) in hat.iter_mut().enumerate() {
            let (ix, iy) = (flat / ny, flat % ny);
            let mut k2 = self.k[0][ix] * self.k[0][ix];
            if self.grid.dims() == 2 {
                k2 = k2 + self.k[1][iy] * self.k[1][iy];
            }
            *v = *v * cr(-k2);
        }
        self.transform(&mut hat, Direction::Inverse);
        hat
    }
}
