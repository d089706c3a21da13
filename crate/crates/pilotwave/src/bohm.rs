//! Guidance dynamics: the probability-current velocity field of a
//! wavefunction, trajectory integration along it, seeded ensembles, and the
//! consistency checks between ensemble statistics and operator expectations.
//!
//! The velocity field is `v = (ħ/m)·Im(ψ*∇ψ)/|ψ|²` per axis. Exact dynamics
//! never reaches a node of ψ, but a discretised field can park a trajectory
//! arbitrarily close to one, so cells with `|ψ|² < ε_node` are masked and
//! filled from their nearest unmasked neighbour with the speed capped; any
//! trajectory that consumes such a cell is flagged `NodeRegularized` and
//! excluded from the tight-tolerance checks (still counted in statistics).

use crate::error::{Error, Result};
use crate::field::{MaskedField, WaveFunction};
use crate::grid::{Direction, Grid, SpectralOp};
use crate::sample::sample_density;
use crate::scalar::{Real, C};
use crate::schrodinger::{evolve, EvolutionRecord, Potential};
use crate::stats::{count_inversions, histogram, mean_and_se, tv_distance};
use rayon::prelude::*;
use std::collections::VecDeque;

/// Node-regularization constants for one run.
#[derive(Debug, Clone, Copy)]
pub struct NodePolicy<R: Real> {
    /// Node threshold relative to `max|ψ|²`.
    pub eps_rel: R,
    /// Speed cap applied to values filled into masked cells.
    pub v_max: R,
}

impl<R: Real> NodePolicy<R> {
    /// Standard policy: `ε_node = 1e-12·max|ψ|²`, `v_max = 10·extent/T`.
    pub fn for_run(grid: &Grid<R>, duration: R) -> Self {
        let extent = (0..grid.dims()).map(|a| grid.extent(a)).fold(R::zero(), R::max);
        Self { eps_rel: R::lit(1e-12), v_max: R::lit(10.0) * extent / duration.abs() }
    }
}

/// Grid-aligned velocity field at one snapshot time, with the node mask
/// (`true` = cell was below the node threshold and holds a filled value).
#[derive(Debug, Clone)]
pub struct VelocityFieldSample<R: Real> {
    pub grid: Grid<R>,
    pub time: R,
    pub v: Vec<[R; 2]>,
    pub mask: Vec<bool>,
}

/// Guidance velocity field of `ψ` under `policy`, with a caller-supplied
/// spectral operator (the per-snapshot loop reuses one).
pub fn velocity_field_with<R: Real>(
    psi: &WaveFunction<R>,
    policy: &NodePolicy<R>,
    op: &SpectralOp<R>,
) -> VelocityFieldSample<R> {
    let grid = psi.grid().clone();
    let grads = psi.gradient_with(op);
    let rho: Vec<R> = psi.values.iter().map(|v| v.norm_sqr()).collect();
    let rho_max = rho.iter().copied().fold(R::zero(), R::max);
    let eps = policy.eps_rel * rho_max;
    let mask: Vec<bool> = rho.iter().map(|&r| r < eps).collect();
    let mut v: Vec<[R; 2]> = (0..grid.len())
        .map(|f| {
            let mut out = [R::zero(); 2];
            for (a, grad) in grads.iter().enumerate() {
                // Im(ψ* ∂ψ)/|ψ|², regularized cells get overwritten below.
                let cur = (psi.values[f].conj() * grad[f]).im;
                out[a] = if mask[f] { R::zero() } else { psi.hbar * cur / (psi.mass[a] * rho[f]) };
            }
            out
        })
        .collect();
    fill_masked_from_neighbours(&grid, &mut v, &mask, policy.v_max);
    VelocityFieldSample { grid, time: psi.time, v, mask }
}

/// Guidance velocity field with a freshly planned transform.
pub fn velocity_field<R: Real>(
    psi: &WaveFunction<R>,
    policy: &NodePolicy<R>,
) -> VelocityFieldSample<R> {
    velocity_field_with(psi, policy, &SpectralOp::new(psi.grid()))
}

/// Assign every masked cell the value of its nearest unmasked neighbour
/// (breadth-first over the periodic grid graph), speed-capped at `v_max`.
pub(crate) fn fill_masked_from_neighbours<R: Real>(
    grid: &Grid<R>,
    v: &mut [[R; 2]],
    mask: &[bool],
    v_max: R,
) {
    // Nothing to fill, or nothing to fill from (an identically-empty field,
    // e.g. an unoccupied spinor branch, keeps its zeros).
    if !mask.iter().any(|&m| m) || mask.iter().all(|&m| m) {
        return;
    }
    let mut source: Vec<Option<usize>> = mask
        .iter()
        .enumerate()
        .map(|(f, &m)| if m { None } else { Some(f) })
        .collect();
    let mut queue: VecDeque<usize> =
        (0..grid.len()).filter(|&f| source[f].is_some()).collect();
    let (nx, ny) = (grid.points(0), grid.points(1));
    while let Some(f) = queue.pop_front() {
        let src = source[f].unwrap();
        let (ix, iy) = grid.split(f);
        let mut neighbours = [0usize; 4];
        let mut count = 0;
        neighbours[count] = grid.index((ix + 1) % nx, iy);
        count += 1;
        neighbours[count] = grid.index((ix + nx - 1) % nx, iy);
        count += 1;
        if grid.dims() == 2 {
            neighbours[count] = grid.index(ix, (iy + 1) % ny);
            count += 1;
            neighbours[count] = grid.index(ix, (iy + ny - 1) % ny);
            count += 1;
        }
        for &nb in &neighbours[..count] {
            if source[nb].is_none() {
                source[nb] = Some(src);
                queue.push_back(nb);
            }
        }
    }
    for f in 0..grid.len() {
        if mask[f] {
            let mut val = v[source[f].expect("grid graph is connected")];
            let speed = (val[0] * val[0] + val[1] * val[1]).sqrt();
            if speed > v_max {
                let scale = v_max / speed;
                val[0] = val[0] * scale;
                val[1] = val[1] * scale;
            }
            v[f] = val;
        }
    }
}

/// Velocity fields at every snapshot of an evolution, interpolating linearly
/// in time and (bi)linearly in space with periodic wrap.
pub struct GuidanceFlow<R: Real> {
    grid: Grid<R>,
    times: Vec<R>,
    fields: Vec<VelocityFieldSample<R>>,
}

impl<R: Real> GuidanceFlow<R> {
    pub fn from_record(record: &EvolutionRecord<R>, policy: &NodePolicy<R>) -> Self {
        let op = SpectralOp::new(record.grid());
        let fields: Vec<_> = record
            .snapshots
            .iter()
            .map(|snap| velocity_field_with(snap, policy, &op))
            .collect();
        Self { grid: record.grid().clone(), times: record.times(), fields }
    }

    /// Assemble a flow from externally computed velocity snapshots (other
    /// guidance laws — spinor currents, classical characteristics — reuse
    /// the same interpolation and integration machinery this way).
    pub fn from_fields(
        grid: Grid<R>,
        times: Vec<R>,
        fields: Vec<VelocityFieldSample<R>>,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::LengthMismatch { grid: times.len().max(1), field: fields.len() });
        }
        Ok(Self { grid, times, fields })
    }

    /// Snapshot lattice the trajectories are reported on.
    pub fn times(&self) -> &[R] {
        &self.times
    }

    pub fn grid(&self) -> &Grid<R> {
        &self.grid
    }

    /// Interpolated velocity at `(t, x)`; the flag reports whether the
    /// interpolation stencil touched a node-masked cell.
    pub fn velocity(&self, t: R, x: [R; 2]) -> ([R; 2], bool) {
        let last = self.times.len() - 1;
        let t0 = self.times[0];
        let dt = if last == 0 { R::one() } else { self.times[1] - t0 };
        let raw = ((t - t0) / dt).floor().as_f64() as i64;
        let idx = raw.clamp(0, last.max(1) as i64 - 1) as usize;
        let theta = ((t - self.times[idx]) / dt).max(R::zero()).min(R::one());
        let (va, ma) = self.sample_spatial(idx, x);
        if last == 0 {
            return (va, ma);
        }
        let (vb, mb) = self.sample_spatial(idx + 1, x);
        let one = R::one();
        (
            [
                (one - theta) * va[0] + theta * vb[0],
                (one - theta) * va[1] + theta * vb[1],
            ],
            ma || mb,
        )
    }

    fn sample_spatial(&self, snap: usize, x: [R; 2]) -> ([R; 2], bool) {
        let field = &self.fields[snap];
        let g = &self.grid;
        let (i0, fx) = g.locate(0, x[0]);
        let i1 = (i0 + 1) % g.points(0);
        if g.dims() == 1 {
            let one = R::one();
            let a = field.v[i0];
            let b = field.v[i1];
            let touched = field.mask[i0] || field.mask[i1];
            return (
                [(one - fx) * a[0] + fx * b[0], R::zero()],
                touched,
            );
        }
        let (j0, fy) = g.locate(1, x[1]);
        let j1 = (j0 + 1) % g.points(1);
        let cells = [
            g.index(i0, j0),
            g.index(i1, j0),
            g.index(i0, j1),
            g.index(i1, j1),
        ];
        let w = [
            (R::one() - fx) * (R::one() - fy),
            fx * (R::one() - fy),
            (R::one() - fx) * fy,
            fx * fy,
        ];
        let mut out = [R::zero(); 2];
        let mut touched = false;
        for (cell, weight) in cells.iter().zip(w) {
            out[0] = out[0] + field.v[*cell][0] * weight;
            out[1] = out[1] + field.v[*cell][1] * weight;
            touched |= field.mask[*cell];
        }
        (out, touched)
    }
}

/// Outcome class of one integrated trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrajectoryStatus {
    Complete,
    /// Touched a node-masked cell; kept, but excluded from tight checks.
    NodeRegularized,
    /// Left the box; samples truncated at the last interior lattice time.
    BoundaryExit,
    /// Stopped at a focusing caustic of a classical characteristic flow.
    CausticTruncated,
}

impl TrajectoryStatus {
    pub fn label(self) -> &'static str {
        match self {
            Self::Complete => "complete",
            Self::NodeRegularized => "node-regularized",
            Self::BoundaryExit => "boundary-exit",
            Self::CausticTruncated => "caustic-truncated",
        }
    }
}

/// One configuration-space path sampled on the evolution's time lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<R: Real> {
    pub x0: [R; 2],
    pub times: Vec<R>,
    pub points: Vec<[R; 2]>,
    pub status: TrajectoryStatus,
}

impl<R: Real> Trajectory<R> {
    pub fn final_point(&self) -> [R; 2] {
        *self.points.last().expect("trajectory holds its initial point")
    }

    /// Position at lattice index `idx` if the trajectory is still alive there.
    pub fn at(&self, idx: usize) -> Option<[R; 2]> {
        self.points.get(idx).copied()
    }
}

/// Integrate one trajectory along a prepared flow. `substeps` RK4 steps are
/// taken per snapshot interval (1 = trajectory step equals the solver step).
pub fn integrate_with_flow<R: Real>(
    flow: &GuidanceFlow<R>,
    x0: [R; 2],
    substeps: usize,
) -> Trajectory<R> {
    let lattice = flow.times();
    let mut points = Vec::with_capacity(lattice.len());
    let mut times = Vec::with_capacity(lattice.len());
    points.push(x0);
    times.push(lattice[0]);
    let mut x = x0;
    let mut touched = false;
    let mut exited = false;
    'windows: for w in 0..lattice.len().saturating_sub(1) {
        let h = (lattice[w + 1] - lattice[w]) / R::from_usize(substeps).unwrap();
        let mut t = lattice[w];
        for _ in 0..substeps {
            let (next, hit) = rk4_step(flow, t, x, h);
            touched |= hit;
            if !flow.grid().contains(next) {
                exited = true;
                break 'windows;
            }
            x = next;
            t = t + h;
        }
        points.push(x);
        times.push(lattice[w + 1]);
    }
    let status = if exited {
        TrajectoryStatus::BoundaryExit
    } else if touched {
        TrajectoryStatus::NodeRegularized
    } else {
        TrajectoryStatus::Complete
    };
    Trajectory { x0, times, points, status }
}

fn rk4_step<R: Real>(
    flow: &GuidanceFlow<R>,
    t: R,
    x: [R; 2],
    h: R,
) -> ([R; 2], bool) {
    let half = h / R::lit(2.0);
    let shift = |p: [R; 2], k: [R; 2], s: R| [p[0] + s * k[0], p[1] + s * k[1]];
    let (k1, m1) = flow.velocity(t, x);
    let (k2, m2) = flow.velocity(t + half, shift(x, k1, half));
    let (k3, m3) = flow.velocity(t + half, shift(x, k2, half));
    let (k4, m4) = flow.velocity(t + h, shift(x, k3, h));
    let sixth = h / R::lit(6.0);
    let two = R::lit(2.0);
    let next = [
        x[0] + sixth * (k1[0] + two * k2[0] + two * k3[0] + k4[0]),
        x[1] + sixth * (k1[1] + two * k2[1] + two * k3[1] + k4[1]),
    ];
    (next, m1 || m2 || m3 || m4)
}

/// Convenience wrapper matching the one-off use case: builds the flow for
/// `record` and integrates a single trajectory from `x0`.
pub fn integrate_trajectory<R: Real>(
    record: &EvolutionRecord<R>,
    x0: [R; 2],
    policy: &NodePolicy<R>,
    substeps: usize,
) -> Trajectory<R> {
    let flow = GuidanceFlow::from_record(record, policy);
    integrate_with_flow(&flow, x0, substeps)
}

/// A seeded trajectory ensemble, aligned with the snapshot lattice of the
/// record that guided it.
#[derive(Debug, Clone)]
pub struct Ensemble<R: Real> {
    pub seed: u64,
    pub times: Vec<R>,
    pub trajectories: Vec<Trajectory<R>>,
}

impl<R: Real> Ensemble<R> {
    /// (node-regularized, boundary-exit) counts.
    pub fn flag_counts(&self) -> (usize, usize) {
        let node = self
            .trajectories
            .iter()
            .filter(|t| t.status == TrajectoryStatus::NodeRegularized)
            .count();
        let exit = self
            .trajectories
            .iter()
            .filter(|t| t.status == TrajectoryStatus::BoundaryExit)
            .count();
        (node, exit)
    }

    /// Positions along `axis` of all trajectories alive at lattice index `idx`.
    pub fn positions_at(&self, idx: usize, axis: usize) -> Vec<R> {
        self.trajectories.iter().filter_map(|t| t.at(idx).map(|p| p[axis])).collect()
    }
}

/// Options for [`run_ensemble`].
#[derive(Debug, Clone, Copy)]
pub struct EnsembleOptions<R: Real> {
    /// Snapshot stride passed to the evolution.
    pub stride: usize,
    /// RK4 substeps per snapshot interval.
    pub substeps: usize,
    /// Node policy override; `None` applies [`NodePolicy::for_run`].
    pub policy: Option<NodePolicy<R>>,
}

impl<R: Real> Default for EnsembleOptions<R> {
    fn default() -> Self {
        Self { stride: 1, substeps: 1, policy: None }
    }
}

/// Evolve `ψ₀` once, draw `n` starts from `|ψ₀|²`, and integrate the whole
/// ensemble against the shared record. Deterministic per seed: trajectories
/// are integrated in parallel but collected in sample order.
pub fn run_ensemble<R: Real>(
    psi0: &WaveFunction<R>,
    potential: &Potential<R>,
    duration: R,
    dt: R,
    n: usize,
    seed: u64,
    options: EnsembleOptions<R>,
) -> Result<(EvolutionRecord<R>, Ensemble<R>)> {
    let record = evolve(psi0, potential, duration, dt, options.stride)?;
    let ensemble = ensemble_from_record(&record, n, seed, options)?;
    Ok((record, ensemble))
}

/// Sample starts from the record's initial density and integrate trajectories.
pub fn ensemble_from_record<R: Real>(
    record: &EvolutionRecord<R>,
    n: usize,
    seed: u64,
    options: EnsembleOptions<R>,
) -> Result<Ensemble<R>> {
    let duration = record.final_state().time - record.initial().time;
    let policy = options
        .policy
        .unwrap_or_else(|| NodePolicy::for_run(record.grid(), duration));
    let flow = GuidanceFlow::from_record(record, &policy);
    let starts = sample_density(&record.initial().density(), n, seed)?;
    let trajectories: Vec<_> = starts
        .par_iter()
        .map(|&x0| integrate_with_flow(&flow, x0, options.substeps))
        .collect();
    Ok(Ensemble { seed, times: flow.times().to_vec(), trajectories })
}

/// Ensemble mean vs. quantum expectation at one snapshot.
#[derive(Debug, Clone)]
pub struct ExpectationCheck<R: Real> {
    pub time: R,
    /// |ensemble mean − ⟨X_a⟩| per active axis.
    pub discrepancy: Vec<R>,
    /// 3·(standard error of the ensemble mean) per active axis.
    pub bound_3se: Vec<R>,
    /// Trajectories alive at this snapshot.
    pub n_used: usize,
}

/// Per-snapshot comparison of the trajectory-ensemble mean against
/// `⟨ψ(t)|X|ψ(t)⟩` (Schrödinger picture), with the 3-standard-error bound.
pub fn check_expectation<R: Real>(
    ensemble: &Ensemble<R>,
    record: &EvolutionRecord<R>,
) -> Vec<ExpectationCheck<R>> {
    let dims = record.grid().dims();
    record
        .snapshots
        .iter()
        .enumerate()
        .map(|(idx, snap)| {
            let qm = snap.expectation_position();
            let mut discrepancy = Vec::with_capacity(dims);
            let mut bound = Vec::with_capacity(dims);
            let mut n_used = 0;
            for axis in 0..dims {
                let xs = ensemble.positions_at(idx, axis);
                n_used = xs.len();
                let (mean, se) = mean_and_se(&xs);
                discrepancy.push((mean - qm[axis]).abs());
                bound.push(R::lit(3.0) * se);
            }
            ExpectationCheck { time: snap.time, discrepancy, bound_3se: bound, n_used }
        })
        .collect()
}

/// Total-variation distance between the ensemble's endpoint histogram along
/// axis 0 and the matching marginal of `|ψ_T|²`, on `bins` equal bins.
pub fn check_equivariance<R: Real>(
    ensemble: &Ensemble<R>,
    psi_t: &WaveFunction<R>,
    bins: usize,
) -> R {
    let g = psi_t.grid();
    let half = g.extent(0) / R::lit(2.0);
    let last = ensemble
        .trajectories
        .iter()
        .filter_map(|t| t.at(ensemble.times.len() - 1).map(|p| p[0]))
        .collect::<Vec<_>>();
    let counts = histogram(&last, bins, -half, half);
    let sample_masses: Vec<R> =
        counts.iter().map(|&c| R::from_usize(c).unwrap()).collect();
    // Bin the density: each cell is centred on its sample point, so a cell
    // straddling a bin edge contributes to both bins in proportion to the
    // overlap (matching the sampler's uniform within-cell jitter exactly).
    let rho = psi_t.density();
    let width = g.extent(0) / R::from_usize(bins).unwrap();
    let delta = g.spacing(0);
    let mut density_masses = vec![R::zero(); bins];
    let clamp_bin = |b: i64| b.clamp(0, bins as i64 - 1) as usize;
    for f in 0..g.len() {
        let mass = rho.values[f];
        let lo = (g.point(f)[0] - delta / R::lit(2.0) + half) / width;
        let hi = lo + delta / width;
        let b_lo = lo.floor().as_f64() as i64;
        let b_hi = hi.floor().as_f64() as i64;
        if b_lo == b_hi {
            density_masses[clamp_bin(b_lo)] = density_masses[clamp_bin(b_lo)] + mass;
        } else {
            // Fraction of the cell left of the edge at b_hi·width.
            let left = (R::from_i64(b_hi).unwrap() - lo) / (hi - lo);
            density_masses[clamp_bin(b_lo)] =
                density_masses[clamp_bin(b_lo)] + mass * left;
            density_masses[clamp_bin(b_hi)] =
                density_masses[clamp_bin(b_hi)] + mass * (R::one() - left);
        }
    }
    tv_distance(&sample_masses, &density_masses)
}

/// Strict order inversions between initial and final positions of unflagged
/// 1D trajectories (zero means no crossing).
pub fn no_crossing_violations<R: Real>(ensemble: &Ensemble<R>) -> usize {
    let complete: Vec<&Trajectory<R>> = ensemble
        .trajectories
        .iter()
        .filter(|t| t.status == TrajectoryStatus::Complete)
        .collect();
    let initial: Vec<R> = complete.iter().map(|t| t.x0[0]).collect();
    let final_: Vec<R> = complete.iter().map(|t| t.final_point()[0]).collect();
    count_inversions(&initial, &final_)
}

/// Observable tags for [`local_expectation`].
pub enum LocalObservable<'a, R: Real> {
    /// `-iħ ∂_axis`.
    Momentum(usize),
    /// `Σ_a -ħ²/(2m_a) ∂_a²`.
    Kinetic,
    /// Kinetic plus the sampled potential.
    Hamiltonian(&'a Potential<R>),
}

/// Mask threshold for local expectations, above the velocity ε so spectral
/// roundoff amplified by 1/|ψ| stays below the check tolerances.
pub const LOCAL_EXPECTATION_EPS_REL: f64 = 1e-10;

/// Local expectation value `A(x) = ½[ψ*(Aψ) + (Aψ)*ψ]/|ψ|² = Re[ψ*(Aψ)]/|ψ|²`
/// (the symmetrized form; both factors coincide for the self-adjoint tags
/// offered here). Node cells are masked, not filled.
pub fn local_expectation<R: Real>(
    observable: LocalObservable<'_, R>,
    psi: &WaveFunction<R>,
) -> Result<MaskedField<R>> {
    let grid = psi.grid().clone();
    let op = SpectralOp::new(&grid);
    let a_psi: Vec<C<R>> = match observable {
        LocalObservable::Momentum(axis) => {
            let grad = op.derivative_axis(&psi.values, axis);
            grad.into_iter().map(|g| g * C::new(R::zero(), -psi.hbar)).collect()
        }
        LocalObservable::Kinetic => kinetic_apply(&op, psi),
        LocalObservable::Hamiltonian(potential) => {
            let v = potential.sample_at(&grid, psi.mass, psi.time)?;
            kinetic_apply(&op, psi)
                .into_iter()
                .zip(v)
                .zip(&psi.values)
                .map(|((k, vv), p)| k + *p * C::new(vv, R::zero()))
                .collect()
        }
    };
    let rho: Vec<R> = psi.values.iter().map(|v| v.norm_sqr()).collect();
    let rho_max = rho.iter().copied().fold(R::zero(), R::max);
    let eps = R::lit(LOCAL_EXPECTATION_EPS_REL) * rho_max;
    let mut values = vec![R::zero(); grid.len()];
    let mut mask = vec![false; grid.len()];
    for f in 0..grid.len() {
        if rho[f] < eps {
            mask[f] = true;
        } else {
            values[f] = (psi.values[f].conj() * a_psi[f]).re / rho[f];
        }
    }
    // MaskedField convention: `mask[f] = true` means the cell is valid.
    for m in mask.iter_mut() {
        *m = !*m;
    }
    Ok(MaskedField { grid, values, mask })
}

/// `Σ_a -ħ²/(2m_a) ∂_a² ψ` with per-axis masses, in one spectral pass.
fn kinetic_apply<R: Real>(op: &SpectralOp<R>, psi: &WaveFunction<R>) -> Vec<C<R>> {
    let grid = psi.grid();
    let mut hat = psi.values.clone();
    op.transform(&mut hat, Direction::Forward);
    let ny = grid.points(1);
    let half = R::lit(0.5);
    for (flat, v) in hat.iter_mut().enumerate() {
        let (ix, iy) = (flat / ny, flat % ny);
        let kx = op.wavenumbers(0)[ix];
        let mut e = half * psi.hbar * psi.hbar * kx * kx / psi.mass[0];
        if grid.dims() == 2 {
            let ky = op.wavenumbers(1)[iy];
            e = e + half * psi.hbar * psi.hbar * ky * ky / psi.mass[1];
        }
        *v = *v * C::new(e, R::zero());
    }
    op.transform(&mut hat, Direction::Inverse);
    hat
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gaussian_packet, GaussianSpec};
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    fn relaxed_policy() -> NodePolicy<f64> {
        NodePolicy { eps_rel: 1e-12, v_max: 1e12 }
    }

    fn plane_wave(k_mode: i32, n: usize, l: f64) -> WaveFunction<f64> {
        let g = Grid::line(n, l).unwrap();
        let k = 2.0 * std::f64::consts::PI * k_mode as f64 / l;
        WaveFunction::from_fn(g, 1.0, [1.0, 1.0], |x| C::from_polar(1.0, k * x[0])).unwrap()
    }

    #[test]
    fn plane_wave_velocity_is_hbar_k_over_m() {
        let l = 8.0 * std::f64::consts::PI;
        let psi = plane_wave(4, 64, l); // k = 1
        let field = velocity_field(&psi, &relaxed_policy());
        for cell in &field.v {
            assert_relative_eq!(cell[0], 1.0, epsilon = 1e-10);
        }
        assert!(field.mask.iter().all(|&m| !m));
    }

    #[test]
    fn real_wavefunction_has_zero_velocity() {
        let g = Grid::line(256, 40.0).unwrap();
        let psi =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 0.0)).unwrap();
        let field = velocity_field(&psi, &relaxed_policy());
        // Probe where the density carries weight; at far-tail cells the
        // division by |ψ|² amplifies spectral roundoff arbitrarily.
        let rho = psi.density();
        let rho_max = rho.values.iter().cloned().fold(0.0, f64::max);
        for (f, cell) in field.v.iter().enumerate() {
            if rho.values[f] >= 1e-10 * rho_max {
                assert!(cell[0].abs() < 1e-9, "v = {} at cell {f}", cell[0]);
            }
        }
    }

    #[test]
    fn spread_gaussian_velocity_slope_matches_the_analytic_rate() {
        // After free evolution to t, v(x) = x·(σ̇/σ)(t) with
        // σ̇/σ = τ·(ħ/2mσ₀²)/(1+τ²), τ = ħt/(2mσ₀²). At t=1, σ₀=1: slope 0.2.
        let g = Grid::line(512, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 0.0)).unwrap();
        let record = evolve(&psi0, &Potential::Free, 1.0, 1e-3, 1000).unwrap();
        let field = velocity_field(record.final_state(), &relaxed_policy());
        let grid = record.grid();
        for f in 0..grid.len() {
            let x = grid.point(f)[0];
            if x.abs() <= 3.0 {
                assert!(
                    (field.v[f][0] - 0.2 * x).abs() <= 1e-5,
                    "v({x}) = {} want {}",
                    field.v[f][0],
                    0.2 * x
                );
            }
        }
    }

    #[test]
    fn node_cells_are_filled_from_neighbours_and_capped() {
        let g = Grid::<f64>::line(64, 64.0).unwrap();
        // Two separated packets create near-zero density between them.
        let spec_a = GaussianSpec::one_d(-10.0, 1.0, 30.0);
        let spec_b = GaussianSpec::one_d(10.0, 1.0, -30.0);
        let psi = crate::field::packet_superposition(
            g,
            1.0,
            [1.0, 1.0],
            &[(C::new(1.0, 0.0), spec_a), (C::new(1.0, 0.0), spec_b)],
        )
        .unwrap();
        let policy = NodePolicy { eps_rel: 1e-12, v_max: 5.0 };
        let field = velocity_field(&psi, &policy);
        assert!(field.mask.iter().any(|&m| m), "expected masked cells between packets");
        for (cell, &masked) in field.v.iter().zip(&field.mask) {
            assert!(cell[0].is_finite());
            if masked {
                assert!(cell[0].abs() <= 5.0 + 1e-12, "cap violated: {}", cell[0]);
            }
        }
    }

    #[test]
    fn plane_wave_trajectory_moves_ballistically() {
        let l = 16.0 * std::f64::consts::PI;
        let psi = plane_wave(8, 128, l); // k = 1, v = 1
        let record = evolve(&psi, &Potential::Free, 1.0, 1e-3, 10).unwrap();
        let traj = integrate_trajectory(&record, [0.5, 0.0], &relaxed_policy(), 1);
        assert_eq!(traj.status, TrajectoryStatus::Complete);
        assert_eq!(traj.points[0], [0.5, 0.0]);
        assert_relative_eq!(traj.final_point()[0], 1.5, epsilon = 1e-8);
    }

    #[test]
    fn free_gaussian_trajectories_follow_the_scaling_law() {
        let g = Grid::line(512, 40.0).unwrap();
        let sigma0 = 1.0;
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, sigma0, 0.0)).unwrap();
        let record = evolve(&psi0, &Potential::Free, 2.0, 1e-3, 1).unwrap();
        let policy = NodePolicy::for_run(record.grid(), 2.0);
        let flow = GuidanceFlow::from_record(&record, &policy);
        let sigma_t = |t: f64| sigma0 * (1.0 + (t / (2.0 * sigma0 * sigma0)).powi(2)).sqrt();
        for &x0 in &[-2.0, -1.0, -0.5, 0.25, 1.0, 1.5, 2.0] {
            let traj = integrate_with_flow(&flow, [x0, 0.0], 1);
            assert_eq!(traj.status, TrajectoryStatus::Complete);
            for (t, p) in traj.times.iter().zip(&traj.points) {
                let expect = x0 * sigma_t(*t) / sigma0;
                let rel = ((p[0] - expect) / expect).abs();
                assert!(rel <= 1e-3, "x0={x0} t={t}: got {} want {expect}", p[0]);
            }
        }
    }

    #[test]
    fn coherent_state_trajectories_are_rigid_translates() {
        let g = Grid::line(512, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(1.0, 0.5f64.sqrt(), 0.0))
                .unwrap();
        let period = 2.0 * std::f64::consts::PI;
        let dt = period / 6400.0;
        let record = evolve(&psi0, &Potential::harmonic_1d(1.0), period, dt, 8).unwrap();
        let policy = NodePolicy::for_run(record.grid(), period);
        let flow = GuidanceFlow::from_record(&record, &policy);
        let trajs: Vec<_> = [-0.5, 0.3, 1.0, 1.8]
            .iter()
            .map(|&x0| integrate_with_flow(&flow, [x0, 0.0], 1))
            .collect();
        for pair in trajs.windows(2) {
            let d0 = pair[1].points[0][0] - pair[0].points[0][0];
            for k in 0..pair[0].points.len() {
                let d = pair[1].points[k][0] - pair[0].points[k][0];
                assert!((d - d0).abs() <= 1e-6, "separation drifted: {d} vs {d0}");
            }
        }
        // And the classical path: x(t) = x₀ - A + A·cos(ωt) for the member
        // starting at the packet centre x₀ = A.
        let center = integrate_with_flow(&flow, [1.0, 0.0], 1);
        for (t, p) in center.times.iter().zip(&center.points) {
            assert!((p[0] - t.cos()).abs() <= 1e-4, "t={t} x={} want {}", p[0], t.cos());
        }
    }

    #[test]
    fn ensembles_are_bit_identical_per_seed() {
        let g = Grid::line(256, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 0.0)).unwrap();
        let opts = EnsembleOptions::default();
        let (_, a) = run_ensemble(&psi0, &Potential::Free, 0.5, 1e-3, 64, 11, opts).unwrap();
        let (_, b) = run_ensemble(&psi0, &Potential::Free, 0.5, 1e-3, 64, 11, opts).unwrap();
        assert_eq!(a.trajectories, b.trajectories);
        let (_, c) = run_ensemble(&psi0, &Potential::Free, 0.5, 1e-3, 64, 12, opts).unwrap();
        assert_ne!(a.trajectories, c.trajectories);
    }

    #[test]
    fn single_member_ensemble_starts_inside_the_sharp_packet() {
        let g = Grid::<f64>::line(256, 40.0).unwrap();
        // Nearly δ-like density: σ comparable to one cell.
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(2.0, 0.2, 0.0)).unwrap();
        let (_, ens) =
            run_ensemble(&psi0, &Potential::Free, 0.1, 1e-3, 1, 5, EnsembleOptions::default())
                .unwrap();
        assert_eq!(ens.trajectories.len(), 1);
        assert!((ens.trajectories[0].x0[0] - 2.0).abs() < 1.5);
    }

    #[test]
    fn expectation_check_stays_within_three_standard_errors() {
        let g = Grid::line(256, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 2.0)).unwrap();
        let (record, ens) =
            run_ensemble(&psi0, &Potential::Free, 1.0, 1e-3, 2000, 17, EnsembleOptions {
                stride: 100,
                ..Default::default()
            })
            .unwrap();
        let checks = check_expectation(&ens, &record);
        assert_eq!(checks[0].n_used, 2000);
        for check in &checks {
            assert!(
                check.discrepancy[0] <= check.bound_3se[0] + 1e-3,
                "t={}: {} > {}",
                check.time,
                check.discrepancy[0],
                check.bound_3se[0]
            );
        }
    }

    #[test]
    fn equivariance_holds_at_start_and_end() {
        let g = Grid::line(256, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 0.0)).unwrap();
        // T = 0: the distance is pure multinomial sampling noise.
        let (record0, ens0) =
            run_ensemble(&psi0, &Potential::Free, 0.0, 1e-3, 10_000, 23, EnsembleOptions::default())
                .unwrap();
        let tv0 = check_equivariance(&ens0, record0.initial(), 64);
        assert!(tv0 <= 0.05, "TV at T=0: {tv0}");
        // T = 1: equivariance keeps the endpoint histogram on |ψ_T|².
        let (record, ens) =
            run_ensemble(&psi0, &Potential::Free, 1.0, 1e-3, 10_000, 23, EnsembleOptions {
                stride: 200,
                ..Default::default()
            })
            .unwrap();
        let tv = check_equivariance(&ens, record.final_state(), 64);
        assert!(tv <= 0.05, "TV at T=1: {tv}");
    }

    #[test]
    fn no_crossings_in_a_spreading_packet() {
        let g = Grid::line(256, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 0.0)).unwrap();
        let (_, ens) =
            run_ensemble(&psi0, &Potential::Free, 1.0, 1e-3, 500, 29, EnsembleOptions {
                stride: 100,
                ..Default::default()
            })
            .unwrap();
        assert_eq!(no_crossing_violations(&ens), 0);
    }

    #[test]
    fn halving_the_trajectory_step_barely_moves_endpoints() {
        let g = Grid::<f64>::line(256, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 1.0)).unwrap();
        let record = evolve(&psi0, &Potential::Free, 1.0, 1e-3, 1).unwrap();
        let policy = NodePolicy::for_run(record.grid(), 1.0);
        let flow = GuidanceFlow::from_record(&record, &policy);
        for &x0 in &[-1.0, 0.5, 1.5] {
            let coarse = integrate_with_flow(&flow, [x0, 0.0], 1);
            let fine = integrate_with_flow(&flow, [x0, 0.0], 2);
            let diff = (coarse.final_point()[0] - fine.final_point()[0]).abs();
            assert!(diff <= 1e-4, "endpoint moved {diff} when halving the step");
        }
    }

    #[test]
    fn local_momentum_of_plane_wave_is_constant() {
        let l = 8.0 * std::f64::consts::PI;
        let psi = plane_wave(4, 64, l); // k = 1
        let field = local_expectation(LocalObservable::Momentum(0), &psi).unwrap();
        for (v, &ok) in field.values.iter().zip(&field.mask) {
            assert!(ok);
            assert_relative_eq!(*v, 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn local_momentum_of_real_gaussian_vanishes() {
        let g = Grid::<f64>::line(256, 40.0).unwrap();
        let psi =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 1.0, 0.0)).unwrap();
        let field = local_expectation(LocalObservable::Momentum(0), &psi).unwrap();
        for (v, &ok) in field.values.iter().zip(&field.mask) {
            if ok {
                assert!(v.abs() < 1e-9);
            }
        }
    }

    #[test]
    fn local_hamiltonian_of_ground_state_is_the_eigenvalue_everywhere() {
        let g = Grid::line(256, 20.0).unwrap();
        let psi =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 0.5f64.sqrt(), 0.0))
                .unwrap();
        let field =
            local_expectation(LocalObservable::Hamiltonian(&Potential::harmonic_1d(1.0)), &psi)
                .unwrap();
        let mut checked = 0;
        for (v, &ok) in field.values.iter().zip(&field.mask) {
            if ok {
                assert!((v - 0.5).abs() <= 1e-6, "local energy {v}");
                checked += 1;
            }
        }
        assert!(checked > 100, "mask left only {checked} cells");
    }

    #[test]
    fn local_hamiltonian_is_constant_along_a_stationary_trajectory() {
        let g = Grid::line(256, 20.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 0.5f64.sqrt(), 0.0))
                .unwrap();
        let pot = Potential::harmonic_1d(1.0);
        let record = evolve(&psi0, &pot, 0.5, 1e-3, 50).unwrap();
        let traj = integrate_trajectory(&record, [0.7, 0.0], &relaxed_policy(), 1);
        let mut values = Vec::new();
        for (snap, point) in record.snapshots.iter().zip(&traj.points) {
            let field = local_expectation(LocalObservable::Hamiltonian(&pot), snap).unwrap();
            let (cell, _) = record.grid().locate(0, point[0]);
            assert!(field.mask[cell]);
            values.push(field.values[cell]);
        }
        let spread = values.iter().cloned().fold(f64::MIN, f64::max)
            - values.iter().cloned().fold(f64::MAX, f64::min);
        assert!(spread <= 1e-5, "local energy drift along trajectory: {spread:.2e}");
    }
}
