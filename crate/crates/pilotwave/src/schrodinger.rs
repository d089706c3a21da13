//! Unitary wavefunction evolution by Strang-split spectral stepping:
//! `exp(-iVΔt/2ħ) · F⁻¹ exp(-iħ|k|²Δt/2m) F · exp(-iVΔt/2ħ)` per step.
//!
//! Both exponential factors are exact unitaries, so norm is conserved to
//! roundoff and the only physical error is the O(Δt²) splitting error.
//! Potentials here are static; the one genuinely time-dependent interaction
//! in the crate (the impulsive measurement coupling) has its own exact
//! factorised propagator in the measurement module. The potential factor of
//! a future time-dependent preset belongs at the half-step time (midpoint
//! rule); the `time` argument of [`Potential::sample_at`] is threaded
//! through for that purpose.

use crate::error::{Error, Result};
use crate::field::{DensityField, WaveFunction};
use crate::grid::{Direction, Grid, SpectralOp};
use crate::scalar::{Real, C};
use crate::stats::ksum;

/// Boundary-leak guard: amplitude allowed within [`BOUNDARY_CELLS`] cells of
/// the box edge before a warning is logged.
pub const BOUNDARY_AMPLITUDE: f64 = 1e-8;
pub const BOUNDARY_CELLS: usize = 5;

/// Real potential on the grid. All presets are time-independent.
#[derive(Debug, Clone, PartialEq)]
pub enum Potential<R: Real> {
    Free,
    /// `Σ_a ½ m_a ω_a² (x_a - c_a)²`.
    Harmonic { omega: [R; 2], center: [R; 2] },
    /// `-F·x`.
    Linear { force: [R; 2] },
    /// Arbitrary static values, one per grid cell.
    Sampled(Vec<R>),
}

impl<R: Real> Potential<R> {
    pub fn harmonic_1d(omega: R) -> Self {
        Self::Harmonic { omega: [omega, R::zero()], center: [R::zero(); 2] }
    }

    /// Sample onto a grid at time `_t` (unused by the static presets) and
    /// validate the values.
    pub fn sample_at(&self, grid: &Grid<R>, mass: [R; 2], _t: R) -> Result<Vec<R>> {
        let half = R::lit(0.5);
        let values: Vec<R> = match self {
            Self::Free => vec![R::zero(); grid.len()],
            Self::Harmonic { omega, center } => (0..grid.len())
                .map(|f| {
                    let p = grid.point(f);
                    (0..grid.dims())
                        .map(|a| {
                            let d = p[a] - center[a];
                            half * mass[a] * omega[a] * omega[a] * d * d
                        })
                        .fold(R::zero(), |s, v| s + v)
                })
                .collect(),
            Self::Linear { force } => (0..grid.len())
                .map(|f| {
                    let p = grid.point(f);
                    -(0..grid.dims()).map(|a| force[a] * p[a]).fold(R::zero(), |s, v| s + v)
                })
                .collect(),
            Self::Sampled(values) => {
                if values.len() != grid.len() {
                    return Err(Error::LengthMismatch { grid: grid.len(), field: values.len() });
                }
                values.clone()
            }
        };
        if let Some(idx) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { context: "potential", index: idx });
        }
        Ok(values)
    }
}

/// Cached split-operator stepper for one `(grid, ħ, m, Δt, V)` combination.
pub struct SplitOperator<R: Real> {
    op: SpectralOp<R>,
    dt: R,
    kinetic_phase: Vec<C<R>>,
    half_potential_phase: Vec<C<R>>,
    potential_values: Vec<R>,
}

impl<R: Real> SplitOperator<R> {
    pub fn new(
        grid: &Grid<R>,
        hbar: R,
        mass: [R; 2],
        potential: &Potential<R>,
        dt: R,
    ) -> Result<Self> {
        if dt == R::zero() || !dt.is_finite() {
            return Err(Error::BadTimeStep { dt: dt.as_f64() });
        }
        let op = SpectralOp::new(grid);
        let ny = grid.points(1);
        let half = R::lit(0.5);
        let kinetic_phase = (0..grid.len())
            .map(|flat| {
                let (ix, iy) = (flat / ny, flat % ny);
                let kx = op.wavenumbers(0)[ix];
                let mut energy = half * hbar * hbar * kx * kx / mass[0];
                if grid.dims() == 2 {
                    let ky = op.wavenumbers(1)[iy];
                    energy = energy + half * hbar * hbar * ky * ky / mass[1];
                }
                C::from_polar(R::one(), -energy * dt / hbar)
            })
            .collect();
        let potential_values = potential.sample_at(grid, mass, R::zero())?;
        let half_potential_phase = potential_values
            .iter()
            .map(|&v| C::from_polar(R::one(), -v * dt / (R::lit(2.0) * hbar)))
            .collect();
        Ok(Self { op, dt, kinetic_phase, half_potential_phase, potential_values })
    }

    pub fn dt(&self) -> R {
        self.dt
    }

    /// Advance one Strang step in place.
    pub fn step(&self, psi: &mut WaveFunction<R>) {
        let values = &mut psi.values;
        for (v, p) in values.iter_mut().zip(&self.half_potential_phase) {
            *v = *v * p;
        }
        self.op.transform(values, Direction::Forward);
        for (v, p) in values.iter_mut().zip(&self.kinetic_phase) {
            *v = *v * p;
        }
        self.op.transform(values, Direction::Inverse);
        for (v, p) in values.iter_mut().zip(&self.half_potential_phase) {
            *v = *v * p;
        }
        psi.time = psi.time + self.dt;
    }

    /// `<H>` = spectral kinetic part plus potential part.
    pub fn energy(&self, psi: &WaveFunction<R>) -> R {
        let grid = self.op.grid();
        let half = R::lit(0.5);
        let mut hat = psi.values.clone();
        self.op.transform(&mut hat, Direction::Forward);
        let total = ksum(hat.iter().map(|v| v.norm_sqr()));
        let ny = grid.points(1);
        let kinetic = ksum(hat.iter().enumerate().map(|(flat, v)| {
            let (ix, iy) = (flat / ny, flat % ny);
            let kx = self.op.wavenumbers(0)[ix];
            let mut e = half * psi.hbar * psi.hbar * kx * kx / psi.mass[0];
            if grid.dims() == 2 {
                let ky = self.op.wavenumbers(1)[iy];
                e = e + half * psi.hbar * psi.hbar * ky * ky / psi.mass[1];
            }
            e * v.norm_sqr()
        })) / total;
        let rho = psi.density();
        let potential =
            ksum(self.potential_values.iter().zip(&rho.values).map(|(&v, &r)| v * r))
                * grid.cell_volume();
        kinetic + potential
    }
}

/// One-off Strang step (constructs the cached stepper internally; evolution
/// loops should build a [`SplitOperator`] once instead).
pub fn step_split_operator<R: Real>(
    psi: &WaveFunction<R>,
    potential: &Potential<R>,
    dt: R,
) -> Result<WaveFunction<R>> {
    let stepper = SplitOperator::new(psi.grid(), psi.hbar, psi.mass, potential, dt)?;
    let mut out = psi.clone();
    stepper.step(&mut out);
    Ok(out)
}

/// Snapshot sequence of an evolution, with the conservation diagnostics
/// accumulated while stepping.
#[derive(Debug, Clone)]
pub struct EvolutionRecord<R: Real> {
    pub snapshots: Vec<WaveFunction<R>>,
    pub dt: R,
    pub stride: usize,
    pub potential: Potential<R>,
    /// max |‖ψ‖ - 1| seen after any step.
    pub norm_drift: R,
    /// max relative drift of `<H>` across snapshots (static potentials).
    pub energy_drift: R,
    /// true if amplitude ever exceeded the boundary guard (also logged).
    pub boundary_warning: bool,
}

impl<R: Real> EvolutionRecord<R> {
    pub fn times(&self) -> Vec<R> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn initial(&self) -> &WaveFunction<R> {
        &self.snapshots[0]
    }

    pub fn final_state(&self) -> &WaveFunction<R> {
        self.snapshots.last().expect("record holds at least ψ₀")
    }

    pub fn grid(&self) -> &Grid<R> {
        self.snapshots[0].grid()
    }

    /// Time between stored snapshots.
    pub fn snapshot_dt(&self) -> R {
        self.dt * R::from_usize(self.stride).unwrap()
    }
}

/// Number of steps encoded by `(duration, dt)`, requiring an integer ratio.
pub(crate) fn step_count<R: Real>(duration: R, dt: R) -> Result<usize> {
    if dt == R::zero() || !dt.is_finite() {
        return Err(Error::BadTimeStep { dt: dt.as_f64() });
    }
    let ratio = (duration / dt).as_f64();
    let steps = ratio.round();
    if ratio < -1e-9 || (ratio - steps).abs() > 1e-9 * ratio.abs().max(1.0) {
        return Err(Error::TimeStepMismatch { duration: duration.as_f64(), dt: dt.as_f64() });
    }
    Ok(steps as usize)
}

/// Evolve `ψ₀` for `duration` in steps of `dt`, storing every `stride`-th
/// state (plus ψ₀). `stride` must divide the step count so snapshots stay
/// uniformly spaced. Backward evolution uses negative `duration` and `dt`.
pub fn evolve<R: Real>(
    psi0: &WaveFunction<R>,
    potential: &Potential<R>,
    duration: R,
    dt: R,
    stride: usize,
) -> Result<EvolutionRecord<R>> {
    let steps = step_count(duration, dt)?;
    if stride == 0 || steps % stride != 0 {
        return Err(Error::Config(format!(
            "snapshot stride {stride} must divide the step count {steps}"
        )));
    }
    let stepper = SplitOperator::new(psi0.grid(), psi0.hbar, psi0.mass, potential, dt)?;
    let mut psi = psi0.clone();
    let mut snapshots = Vec::with_capacity(steps / stride + 1);
    snapshots.push(psi.clone());
    let mut norm_drift = (psi.norm() - R::one()).abs();
    let energy0 = stepper.energy(&psi);
    let mut energy_drift = R::zero();
    let mut boundary_warning = false;
    for k in 1..=steps {
        stepper.step(&mut psi);
        norm_drift = norm_drift.max((psi.norm() - R::one()).abs());
        if k % stride == 0 {
            let drift = ((stepper.energy(&psi) - energy0) / energy0).abs();
            energy_drift = energy_drift.max(drift);
            boundary_warning |= check_boundary(&psi.density());
            snapshots.push(psi.clone());
        }
    }
    Ok(EvolutionRecord {
        snapshots,
        dt,
        stride,
        potential: potential.clone(),
        norm_drift,
        energy_drift,
        boundary_warning,
    })
}

/// Warn (once per call site invocation) when amplitude reaches the box edge;
/// periodic wrap-around would silently corrupt the run.
pub(crate) fn check_boundary<R: Real>(rho: &DensityField<R>) -> bool {
    let mass = rho.boundary_mass(BOUNDARY_CELLS).as_f64();
    // A uniform amplitude of BOUNDARY_AMPLITUDE across the band carries
    // amplitude²·(band volume) of mass; less than that is tail noise.
    let g = rho.grid();
    let interior: usize = (0..g.dims())
        .map(|axis| g.points(axis).saturating_sub(2 * BOUNDARY_CELLS))
        .product();
    let band_volume = (g.len() - interior.min(g.len())) as f64 * g.cell_volume().as_f64();
    if mass > BOUNDARY_AMPLITUDE * BOUNDARY_AMPLITUDE * band_volume {
        log::warn!(
            "probability mass {mass:.3e} within {BOUNDARY_CELLS} cells of the box edge; \
             enlarge the domain"
        );
        return true;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{gaussian_packet, GaussianSpec};
    use crate::grid::Grid;
    use approx::assert_relative_eq;

    fn free_packet(sigma: f64, momentum: f64) -> WaveFunction<f64> {
        let g = Grid::line(512, 40.0).unwrap();
        gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, sigma, momentum)).unwrap()
    }

    /// Harmonic ground state for m = ω = ħ = 1: density std = √(1/2)/... the
    /// amplitude is exp(-x²/2), i.e. density std σ = 1/√2 ⇒ σ² = 1/2.
    fn harmonic_ground() -> WaveFunction<f64> {
        let g = Grid::line(512, 40.0).unwrap();
        gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 0.5f64.sqrt(), 0.0)).unwrap()
    }

    #[test]
    fn plane_wave_picks_up_the_exact_kinetic_phase() {
        let l = 2.0 * std::f64::consts::PI;
        let g = Grid::line(64, l).unwrap();
        let k = 3.0;
        let psi = WaveFunction::from_fn(g, 1.0, [1.0, 1.0], |x| C::from_polar(1.0, k * x[0]))
            .unwrap();
        let dt = 1e-3;
        let out = step_split_operator(&psi, &Potential::Free, dt).unwrap();
        // e^{ikx} → e^{i(kx - ħk²t/2m)}
        let expect_phase = -k * k * dt / 2.0;
        for (o, p) in out.values.iter().zip(&psi.values) {
            let rotated = p * C::from_polar(1.0, expect_phase);
            assert_relative_eq!(o.re, rotated.re, epsilon = 1e-12);
            assert_relative_eq!(o.im, rotated.im, epsilon = 1e-12);
        }
        assert_relative_eq!(out.norm(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn harmonic_ground_state_is_stationary_with_high_per_step_fidelity() {
        let psi0 = harmonic_ground();
        let pot = Potential::harmonic_1d(1.0);
        let out = step_split_operator(&psi0, &pot, 1e-3).unwrap();
        // Up to the global phase e^{-iωΔt/2} the state must return to itself.
        let fidelity = psi0.inner(&out).norm();
        assert!(fidelity >= 1.0 - 1e-8, "per-step fidelity {fidelity}");
        let phase = psi0.inner(&out).arg();
        assert_relative_eq!(phase, -0.5e-3, epsilon = 1e-9);
    }

    #[test]
    fn free_gaussian_width_follows_the_spreading_law() {
        let sigma0 = 1.0;
        let psi0 = free_packet(sigma0, 0.0);
        // T = 2mσ₀²/ħ doubles the variance: σ(T) = σ₀√2.
        let record = evolve(&psi0, &Potential::Free, 2.0, 1e-3, 2000).unwrap();
        let rho = record.final_state().density();
        let g = rho.grid().clone();
        let var = crate::stats::ksum(
            (0..g.len()).map(|f| g.point(f)[0].powi(2) * rho.values[f]),
        ) * g.cell_volume();
        let expect = sigma0 * sigma0 * 2.0;
        assert_relative_eq!(var, expect, max_relative = 1e-4);
        assert!(record.norm_drift <= 1e-9, "norm drift {:.3e}", record.norm_drift);
    }

    #[test]
    fn ehrenfest_drift_of_a_kicked_packet() {
        let psi0 = free_packet(1.0, 2.0); // <p> = 2, m = 1
        let record = evolve(&psi0, &Potential::Free, 1.0, 1e-3, 1000).unwrap();
        let x1 = record.final_state().expectation_position()[0];
        assert_relative_eq!(x1, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn coherent_state_centre_oscillates_at_a_cos_omega_t() {
        let g = Grid::line(512, 40.0).unwrap();
        let a = 1.0;
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(a, 0.5f64.sqrt(), 0.0))
                .unwrap();
        let pot = Potential::harmonic_1d(1.0);
        let period = 2.0 * std::f64::consts::PI;
        let dt = period / 6400.0;
        let record = evolve(&psi0, &pot, period, dt, 400).unwrap();
        for snap in &record.snapshots {
            let expect = a * snap.time.cos();
            let got = snap.expectation_position()[0];
            assert!((got - expect).abs() <= 1e-5, "t={} got={got} want={expect}", snap.time);
        }
        assert!(record.energy_drift <= 1e-6, "energy drift {:.3e}", record.energy_drift);
        assert!(record.norm_drift <= 1e-9);
    }

    #[test]
    fn zero_duration_returns_only_the_initial_state() {
        let psi0 = free_packet(1.0, 0.0);
        let record = evolve(&psi0, &Potential::Free, 0.0, 1e-3, 1).unwrap();
        assert_eq!(record.snapshots.len(), 1);
        assert_eq!(record.snapshots[0].values, psi0.values);
    }

    #[test]
    fn non_integer_step_ratio_is_rejected() {
        let psi0 = free_packet(1.0, 0.0);
        assert!(matches!(
            evolve(&psi0, &Potential::Free, 1.0, 3e-4, 1),
            Err(Error::TimeStepMismatch { .. })
        ));
    }

    #[test]
    fn nan_potential_is_rejected() {
        let psi0 = free_packet(1.0, 0.0);
        let mut v = vec![0.0; 512];
        v[100] = f64::NAN;
        assert!(matches!(
            step_split_operator(&psi0, &Potential::Sampled(v), 1e-3),
            Err(Error::NonFinite { context: "potential", .. })
        ));
    }

    #[test]
    fn forward_then_backward_evolution_recovers_the_state() {
        let psi0 = free_packet(1.0, 1.0);
        let pot = Potential::harmonic_1d(1.0);
        let fwd = evolve(&psi0, &pot, 0.5, 1e-3, 500).unwrap();
        let back = evolve(fwd.final_state(), &pot, -0.5, -1e-3, 500).unwrap();
        let fidelity = psi0.inner(back.final_state()).norm();
        assert!(fidelity >= 1.0 - 1e-8, "round-trip fidelity {fidelity}");
    }

    #[test]
    fn splitting_error_converges_at_second_order() {
        let g = Grid::line(256, 40.0).unwrap();
        let psi0 =
            gaussian_packet(g, 1.0, [1.0, 1.0], GaussianSpec::one_d(1.0, 0.5f64.sqrt(), 0.0))
                .unwrap();
        let pot = Potential::harmonic_1d(1.0);
        let t = 0.4;
        let err = |dt: f64| {
            let reference = evolve(&psi0, &pot, t, 5e-4, 800).unwrap();
            let run = evolve(&psi0, &pot, t, dt, (t / dt).round() as usize).unwrap();
            let diff: f64 = crate::stats::ksum(
                run.final_state()
                    .values
                    .iter()
                    .zip(&reference.final_state().values)
                    .map(|(a, b)| (a - b).norm_sqr()),
            );
            diff.sqrt()
        };
        let ratio = err(4e-3) / err(2e-3);
        assert!((3.2..=4.8).contains(&ratio), "convergence ratio {ratio}");
    }
}
