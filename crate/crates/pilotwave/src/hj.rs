//! Classical Hamilton–Jacobi comparator (1D).
//!
//! The phase ansatz `S(q,t) = a q² + b q + c` turns the H-J equation
//! `∂S/∂t + (∂S/∂q)²/2m + V = 0` into a Riccati system for at-most-quadratic
//! potentials:
//!
//! ```text
//! ȧ = -2a²/m - ½mω²      ḃ = -2ab/m + F      ċ = -b²/2m
//! ```
//!
//! (harmonic `½mω²q²` contributes the `ω` term, linear `-Fq` the `F` term).
//! Density transport rides the affine characteristic flow `q ↦ αq + β`,
//! `α̇ = 2aα/m`, `β̇ = (2aβ + b)/m`, so one resampling step suffices for any
//! horizon. The quantum-side terms (quantum potential, classical-limit
//! residual) live here too, as they exist only for this comparison.

use crate::bohm::{Trajectory, TrajectoryStatus};
use crate::error::{Error, Result};
use crate::field::{DensityField, MaskedField, WaveFunction};
use crate::grid::SpectralOp;
use crate::sample::sample_density;
use crate::scalar::Real;
use crate::schrodinger::Potential;
use rayon::prelude::*;

/// Default blow-up bound on |a|; the focusing time is declared reached when
/// the quadratic coefficient exceeds it.
pub const CAUSTIC_LIMIT: f64 = 1e6;

/// Internal ODE substep ceiling used when a caller hands a coarse Δt.
const MAX_ODE_STEP: f64 = 1e-3;

/// Potential presets compatible with the quadratic ansatz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QuadraticPotential<R: Real> {
    Free,
    /// `V = -F q`.
    Linear { force: R },
    /// `V = ½ m ω² q²`.
    Harmonic { omega: R },
}

/// Quadratic-phase state `S = a q² + b q + c` with its evolution parameters.
#[derive(Debug, Clone, Copy)]
pub struct QuadraticHJState<R: Real> {
    pub a: R,
    pub b: R,
    pub c: R,
    pub mass: R,
    pub potential: QuadraticPotential<R>,
    pub time: R,
    /// Caustic guard on |a|.
    pub caustic_limit: R,
}

impl<R: Real> QuadraticHJState<R> {
    pub fn new(a: R, b: R, c: R, mass: R, potential: QuadraticPotential<R>) -> Self {
        Self { a, b, c, mass, potential, time: R::zero(), caustic_limit: R::lit(CAUSTIC_LIMIT) }
    }

    /// Right-hand side of the coefficient ODEs.
    fn rhs(&self, y: &[R; 3]) -> [R; 3] {
        let [a, b, _] = *y;
        let m = self.mass;
        let half = R::lit(0.5);
        let (omega2, force) = match self.potential {
            QuadraticPotential::Free => (R::zero(), R::zero()),
            QuadraticPotential::Linear { force } => (R::zero(), force),
            QuadraticPotential::Harmonic { omega } => (omega * omega, R::zero()),
        };
        let two = R::lit(2.0);
        [
            -two * a * a / m - half * m * omega2,
            -two * a * b / m + force,
            -half * b * b / m,
        ]
    }

    /// Classical velocity field `v(q) = (2aq + b)/m`.
    pub fn velocity(&self, q: R) -> R {
        (R::lit(2.0) * self.a * q + self.b) / self.mass
    }
}

/// Classic RK4 on a fixed-size system.
fn rk4<R: Real, const N: usize>(
    f: impl Fn(R, &[R; N]) -> [R; N],
    t: R,
    y: &[R; N],
    h: R,
) -> [R; N] {
    let half = h / R::lit(2.0);
    let add = |y: &[R; N], k: &[R; N], s: R| {
        let mut out = *y;
        for i in 0..N {
            out[i] = out[i] + s * k[i];
        }
        out
    };
    let k1 = f(t, y);
    let k2 = f(t + half, &add(y, &k1, half));
    let k3 = f(t + half, &add(y, &k2, half));
    let k4 = f(t + h, &add(y, &k3, h));
    let sixth = h / R::lit(6.0);
    let two = R::lit(2.0);
    let mut out = *y;
    for i in 0..N {
        out[i] = out[i] + sixth * (k1[i] + two * k2[i] + two * k3[i] + k4[i]);
    }
    out
}

fn substep_count<R: Real>(dt: R) -> usize {
    (dt.abs().as_f64() / MAX_ODE_STEP).ceil().max(1.0) as usize
}

/// Advance the coefficients by `Δt` (internally substepped). Fails with the
/// caustic time when |a| crosses the configured bound.
pub fn evolve_quadratic_s<R: Real>(
    state: &QuadraticHJState<R>,
    dt: R,
) -> Result<QuadraticHJState<R>> {
    let n = substep_count(dt);
    let h = dt / R::from_usize(n).unwrap();
    let mut out = *state;
    let mut y = [out.a, out.b, out.c];
    for _ in 0..n {
        y = rk4(|_, y| out.rhs(y), out.time, &y, h);
        out.time = out.time + h;
        if !y[0].is_finite() || y[0].abs() > out.caustic_limit {
            return Err(Error::CausticReached {
                time: out.time.as_f64(),
                limit: out.caustic_limit.as_f64(),
            });
        }
    }
    out.a = y[0];
    out.b = y[1];
    out.c = y[2];
    Ok(out)
}

/// The affine characteristic map `q₀ ↦ α q₀ + β` accumulated by a flow.
#[derive(Debug, Clone, Copy)]
pub struct AffineFlow<R: Real> {
    pub alpha: R,
    pub beta: R,
}

impl<R: Real> AffineFlow<R> {
    pub fn identity() -> Self {
        Self { alpha: R::one(), beta: R::zero() }
    }
}

/// Evolve coefficients and flow map together over `dt`; returns the advanced
/// state and the composed map (relative to `state.time`).
pub fn evolve_with_flow<R: Real>(
    state: &QuadraticHJState<R>,
    dt: R,
) -> Result<(QuadraticHJState<R>, AffineFlow<R>)> {
    let n = substep_count(dt);
    let h = dt / R::from_usize(n).unwrap();
    let mut out = *state;
    let mut y = [out.a, out.b, out.c, R::one(), R::zero()];
    let two = R::lit(2.0);
    for _ in 0..n {
        let rhs = |_: R, y: &[R; 5]| {
            let coeff = out.rhs(&[y[0], y[1], y[2]]);
            let alpha_dot = two * y[0] * y[3] / out.mass;
            let beta_dot = (two * y[0] * y[4] + y[1]) / out.mass;
            [coeff[0], coeff[1], coeff[2], alpha_dot, beta_dot]
        };
        y = rk4(rhs, out.time, &y, h);
        out.time = out.time + h;
        if !y[0].is_finite() || y[0].abs() > out.caustic_limit {
            return Err(Error::CausticReached {
                time: out.time.as_f64(),
                limit: out.caustic_limit.as_f64(),
            });
        }
    }
    out.a = y[0];
    out.b = y[1];
    out.c = y[2];
    Ok((out, AffineFlow { alpha: y[3], beta: y[4] }))
}

/// Transport `ρ` along the characteristics of `state` for `Δt`:
/// `ρ'(q) = ρ(flow⁻¹(q)) / |α|`, resampled onto the same grid with cubic
/// (Catmull–Rom) interpolation. One call resamples once, so prefer a single
/// large `Δt` over chained small ones.
pub fn transport_density<R: Real>(
    rho: &DensityField<R>,
    state: &QuadraticHJState<R>,
    dt: R,
) -> Result<DensityField<R>> {
    let (_, flow) = evolve_with_flow(state, dt)?;
    let grid = rho.grid().clone();
    if grid.dims() != 1 {
        return Err(Error::DimsMismatch { expected: 1, got: grid.dims() });
    }
    let inv_alpha = R::one() / flow.alpha;
    let values: Vec<R> = (0..grid.len())
        .map(|f| {
            let q = grid.point(f)[0];
            let q0 = (q - flow.beta) * inv_alpha;
            (cubic_sample(rho, q0) * inv_alpha.abs()).max(R::zero())
        })
        .collect();
    DensityField::new(grid, values)
}

/// Catmull–Rom interpolation of a 1D grid field with periodic index wrap.
fn cubic_sample<R: Real>(rho: &DensityField<R>, x: R) -> R {
    let g = rho.grid();
    let n = g.points(0);
    let (i1, t) = g.locate(0, x);
    let at = |i: i64| rho.values[(i.rem_euclid(n as i64)) as usize];
    let (f0, f1, f2, f3) =
        (at(i1 as i64 - 1), at(i1 as i64), at(i1 as i64 + 1), at(i1 as i64 + 2));
    let half = R::lit(0.5);
    let two = R::lit(2.0);
    let three = R::lit(3.0);
    let four = R::lit(4.0);
    let five = R::lit(5.0);
    let c0 = two * f1;
    let c1 = f2 - f0;
    let c2 = two * f0 - five * f1 + four * f2 - f3;
    let c3 = -f0 + three * f1 - three * f2 + f3;
    half * (c0 + t * (c1 + t * (c2 + t * c3)))
}

/// H-J fluid: quadratic phase plus a transported density. The density is
/// always pulled back from the *initial* profile through the accumulated
/// flow map, so repeated `advance` calls do not stack resampling error.
#[derive(Debug, Clone)]
pub struct HJFluid<R: Real> {
    pub state: QuadraticHJState<R>,
    initial_rho: DensityField<R>,
    flow: AffineFlow<R>,
}

impl<R: Real> HJFluid<R> {
    pub fn new(state: QuadraticHJState<R>, rho: DensityField<R>) -> Result<Self> {
        rho.require_probability("hj fluid density", 1e-6)?;
        if rho.grid().dims() != 1 {
            return Err(Error::DimsMismatch { expected: 1, got: rho.grid().dims() });
        }
        Ok(Self { state, initial_rho: rho, flow: AffineFlow::identity() })
    }

    pub fn advance(&mut self, dt: R) -> Result<()> {
        let (state, step_flow) = evolve_with_flow(&self.state, dt)?;
        self.state = state;
        // Compose: q ↦ α₂(α₁ q + β₁) + β₂.
        self.flow = AffineFlow {
            alpha: step_flow.alpha * self.flow.alpha,
            beta: step_flow.alpha * self.flow.beta + step_flow.beta,
        };
        Ok(())
    }

    pub fn flow(&self) -> AffineFlow<R> {
        self.flow
    }

    pub fn initial_density(&self) -> &DensityField<R> {
        &self.initial_rho
    }

    /// Current density, resampled once from the initial profile.
    pub fn density(&self) -> Result<DensityField<R>> {
        let grid = self.initial_rho.grid().clone();
        let inv_alpha = R::one() / self.flow.alpha;
        let values: Vec<R> = (0..grid.len())
            .map(|f| {
                let q = grid.point(f)[0];
                let q0 = (q - self.flow.beta) * inv_alpha;
                (cubic_sample(&self.initial_rho, q0) * inv_alpha.abs()).max(R::zero())
            })
            .collect();
        DensityField::new(grid, values)
    }

    /// Exact bin masses of the transported density on `bins` equal bins:
    /// integrates the initial density over the back-mapped bins, splitting
    /// straddled cells, so no resampling error enters histogram checks.
    pub fn transported_bin_masses(&self, bins: usize) -> Vec<R> {
        let g = self.initial_rho.grid();
        let half_l = g.extent(0) / R::lit(2.0);
        let width = g.extent(0) / R::from_usize(bins).unwrap();
        let delta = g.spacing(0);
        let mut masses = vec![R::zero(); bins];
        for f in 0..g.len() {
            let mass = self.initial_rho.values[f] * delta;
            // Forward-map the (centred) cell of this sample point.
            let c = g.point(f)[0];
            let lo = self.flow.alpha * (c - delta / R::lit(2.0)) + self.flow.beta;
            let hi = self.flow.alpha * (c + delta / R::lit(2.0)) + self.flow.beta;
            let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
            deposit_interval(&mut masses, mass, lo, hi, -half_l, width);
        }
        masses
    }
}

/// Spread `mass` uniformly over `[lo, hi)` into equal-width bins starting at
/// `origin`; out-of-range mass is clamped into the end bins.
fn deposit_interval<R: Real>(masses: &mut [R], mass: R, lo: R, hi: R, origin: R, width: R) {
    let bins = masses.len();
    let span = hi - lo;
    let to_bin = |b: i64| b.clamp(0, bins as i64 - 1) as usize;
    let b_lo = ((lo - origin) / width).floor().as_f64() as i64;
    let b_hi = ((hi - origin) / width).floor().as_f64() as i64;
    if b_lo == b_hi || span == R::zero() {
        masses[to_bin(b_lo)] = masses[to_bin(b_lo)] + mass;
        return;
    }
    for b in b_lo..=b_hi {
        let edge_lo = origin + width * R::from_i64(b).unwrap();
        let seg_lo = edge_lo.max(lo);
        let seg_hi = (edge_lo + width).min(hi);
        if seg_hi > seg_lo {
            masses[to_bin(b)] = masses[to_bin(b)] + mass * (seg_hi - seg_lo) / span;
        }
    }
}

/// Integrate `dζ/dt = v(ζ, t)` from `q₀` for `duration`, reporting samples
/// every `dt`. The coefficient ODEs are co-integrated at the RK4 substep
/// times, so no interpolation error enters. A caustic truncates the
/// trajectory and flags it.
pub fn integrate_zeta<R: Real>(
    state: &QuadraticHJState<R>,
    q0: R,
    duration: R,
    dt: R,
) -> Result<Trajectory<R>> {
    if dt == R::zero() || !dt.is_finite() {
        return Err(Error::BadTimeStep { dt: dt.as_f64() });
    }
    let ratio = (duration / dt).as_f64();
    if (ratio - ratio.round()).abs() > 1e-9 * ratio.abs().max(1.0) || ratio < 0.0 {
        return Err(Error::TimeStepMismatch { duration: duration.as_f64(), dt: dt.as_f64() });
    }
    let steps = ratio.round() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut points = Vec::with_capacity(steps + 1);
    let mut status = TrajectoryStatus::Complete;
    let mut y = [state.a, state.b, state.c, q0];
    let mut t = state.time;
    times.push(t);
    points.push([q0, R::zero()]);
    let two = R::lit(2.0);
    'main: for _ in 0..steps {
        let n = substep_count(dt);
        let h = dt / R::from_usize(n).unwrap();
        for _ in 0..n {
            let rhs = |_: R, y: &[R; 4]| {
                let coeff = state.rhs(&[y[0], y[1], y[2]]);
                let zeta_dot = (two * y[0] * y[3] + y[1]) / state.mass;
                [coeff[0], coeff[1], coeff[2], zeta_dot]
            };
            y = rk4(rhs, t, &y, h);
            t = t + h;
            if !y[0].is_finite() || y[0].abs() > state.caustic_limit {
                status = TrajectoryStatus::CausticTruncated;
                break 'main;
            }
        }
        times.push(t);
        points.push([y[3], R::zero()]);
    }
    Ok(Trajectory { x0: [q0, R::zero()], times, points, status })
}

/// ζ-ensemble: seeded starts from `ρ₀`, trajectories in parallel, collected
/// in draw order (deterministic per seed).
pub fn run_zeta_ensemble<R: Real>(
    state: &QuadraticHJState<R>,
    rho0: &DensityField<R>,
    duration: R,
    dt: R,
    n: usize,
    seed: u64,
) -> Result<Vec<Trajectory<R>>> {
    let starts = sample_density(rho0, n, seed)?;
    starts
        .par_iter()
        .map(|&p| integrate_zeta(state, p[0], duration, dt))
        .collect()
}

/// Quantum potential `V_Q = -(ħ²/2m)·(∇²R)/R`, `R = |ψ|`, spectral
/// Laplacian; cells with `|ψ|² < 1e-12·max` are masked (`mask = false`).
pub fn quantum_potential<R: Real>(psi: &WaveFunction<R>) -> MaskedField<R> {
    let grid = psi.grid().clone();
    let op = SpectralOp::new(&grid);
    let r_field: Vec<crate::scalar::C<R>> =
        psi.values.iter().map(|v| crate::scalar::C::new(v.norm(), R::zero())).collect();
    let lap = op.laplacian(&r_field);
    let rho_max = psi.values.iter().map(|v| v.norm_sqr()).fold(R::zero(), R::max);
    let eps = R::lit(1e-12) * rho_max;
    let prefactor = -psi.hbar * psi.hbar / (R::lit(2.0) * psi.mass[0]);
    let mut values = vec![R::zero(); grid.len()];
    let mut mask = vec![false; grid.len()];
    for f in 0..grid.len() {
        let rho = psi.values[f].norm_sqr();
        if rho >= eps {
            mask[f] = true;
            values[f] = prefactor * lap[f].re / psi.values[f].norm();
        }
    }
    MaskedField { grid, values, mask }
}

/// Residual diagnostics of the phase equation
/// `∂S̃/∂t + (∂S̃/∂q)²/2m + V - (ħ²/2m)(∂²R̃/∂q²)/R̃ = 0`
/// over the probed region (`|ψ|² ≥ probe_rel · max`), L²-normed.
#[derive(Debug, Clone, Copy)]
pub struct ResidualReport<R: Real> {
    /// Full residual including the quantum term.
    pub residual: R,
    /// Residual with the quantum term dropped (classical H-J residual).
    pub residual_without_vq: R,
    /// L² norm of the quantum-potential term itself.
    pub vq_norm: R,
    pub cells_probed: usize,
}

/// Evaluate the phase-equation residual from three consecutive snapshots
/// (`∂S̃/∂t` by centred difference). 1D only; phases are unwrapped from the
/// density maximum outward and anchored across snapshots.
pub fn classical_limit_residual<R: Real>(
    prev: &WaveFunction<R>,
    mid: &WaveFunction<R>,
    next: &WaveFunction<R>,
    potential: &Potential<R>,
    probe_rel: R,
) -> Result<ResidualReport<R>> {
    let grid = mid.grid().clone();
    if grid.dims() != 1 {
        return Err(Error::DimsMismatch { expected: 1, got: grid.dims() });
    }
    let n = grid.len();
    let rho: Vec<R> = mid.values.iter().map(|v| v.norm_sqr()).collect();
    let rho_max = rho.iter().copied().fold(R::zero(), R::max);
    let probe: Vec<bool> = rho.iter().map(|&r| r >= probe_rel * rho_max).collect();
    let anchor = rho
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite density"))
        .map(|(i, _)| i)
        .expect("non-empty grid");

    // Unwrap each snapshot spatially from the shared anchor; chain anchor
    // values in time through wrapped differences so the three phase sheets
    // sit on one branch.
    let theta_mid = unwrap_phase(mid, anchor, &probe)?;
    let mut theta_prev = unwrap_phase(prev, anchor, &probe)?;
    let mut theta_next = unwrap_phase(next, anchor, &probe)?;
    let d_prev = wrap_angle(theta_prev[anchor] - theta_mid[anchor]);
    let d_next = wrap_angle(theta_next[anchor] - theta_mid[anchor]);
    let off_prev = theta_mid[anchor] + d_prev - theta_prev[anchor];
    let off_next = theta_mid[anchor] + d_next - theta_next[anchor];
    for v in theta_prev.iter_mut() {
        *v = *v + off_prev;
    }
    for v in theta_next.iter_mut() {
        *v = *v + off_next;
    }

    let dt_snap = next.time - prev.time;
    let hbar = mid.hbar;
    let mass = mid.mass[0];
    let v_samples = potential.sample_at(&grid, mid.mass, mid.time)?;
    let vq = quantum_potential(mid);
    let dx = grid.spacing(0);
    let half = R::lit(0.5);
    let twelve = R::lit(12.0);
    let eight = R::lit(8.0);

    let mut sq_full = ksum_init();
    let mut sq_wo = ksum_init();
    let mut sq_vq = ksum_init();
    let mut cells = 0usize;
    for f in 2..n.saturating_sub(2) {
        if !probe[f] {
            continue;
        }
        // All stencil cells must be probed for the FD phase derivative.
        if !(probe[f - 2] && probe[f - 1] && probe[f + 1] && probe[f + 2]) {
            continue;
        }
        let s_t = hbar * (theta_next[f] - theta_prev[f]) / dt_snap;
        let s_q = hbar
            * (-theta_mid[f + 2] + eight * theta_mid[f + 1] - eight * theta_mid[f - 1]
                + theta_mid[f - 2])
            / (twelve * dx);
        let kin = half * s_q * s_q / mass;
        let q_term = vq.values[f];
        let res = s_t + kin + v_samples[f] + q_term;
        sq_full.add(res * res * dx);
        let res_wo = s_t + kin + v_samples[f];
        sq_wo.add(res_wo * res_wo * dx);
        sq_vq.add(q_term * q_term * dx);
        cells += 1;
    }
    Ok(ResidualReport {
        residual: sq_full.value().sqrt(),
        residual_without_vq: sq_wo.value().sqrt(),
        vq_norm: sq_vq.value().sqrt(),
        cells_probed: cells,
    })
}

fn ksum_init<R: Real>() -> crate::stats::KahanSum<R> {
    crate::stats::KahanSum::new()
}

fn wrap_angle<R: Real>(theta: R) -> R {
    let two_pi = R::lit(2.0) * R::PI();
    let mut out = theta;
    while out > R::PI() {
        out = out - two_pi;
    }
    while out < -R::PI() {
        out = out + two_pi;
    }
    out
}

/// Cumulative 1D phase unwrap from `anchor` outward. Fails if a wrapped
/// increment inside the probed region exceeds 0.9π (too close to a node for
/// the phase to be trustworthy).
fn unwrap_phase<R: Real>(
    psi: &WaveFunction<R>,
    anchor: usize,
    probe: &[bool],
) -> Result<Vec<R>> {
    let n = psi.grid().len();
    let raw: Vec<R> = psi.values.iter().map(|v| v.arg()).collect();
    let mut theta = vec![R::zero(); n];
    theta[anchor] = raw[anchor];
    let limit = R::lit(0.9) * R::PI();
    for f in (anchor + 1)..n {
        let jump = wrap_angle(raw[f] - raw[f - 1]);
        if jump.abs() > limit && probe[f] && probe[f - 1] {
            return Err(Error::PhaseUnwrap { index: f, jump: jump.as_f64() });
        }
        theta[f] = theta[f - 1] + jump;
    }
    for f in (0..anchor).rev() {
        let jump = wrap_angle(raw[f + 1] - raw[f]);
        if jump.abs() > limit && probe[f] && probe[f + 1] {
            return Err(Error::PhaseUnwrap { index: f, jump: jump.as_f64() });
        }
        theta[f] = theta[f + 1] - jump;
    }
    Ok(theta)
}
