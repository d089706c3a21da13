//! Two-component spinor dynamics (1D position × spin-½ branch).
//!
//! The Hamiltonian is `(p − eA/c)²/2m + V(x) + μ B(x)·σ`. Evolution uses the
//! same Strang splitting as the scalar solver, with the local factor promoted
//! to an exact per-point 2×2 matrix exponential and the kinetic factor shifted
//! by a uniform vector potential. Guidance runs on the doubled configuration
//! space: positions follow the current of the branch nearest the spin
//! be-able, and the be-able itself follows the spin-transport rate
//! `v_S = J_S / |ψ(x,λ)|²` built from `(iħ)⁻¹[S₃, μB·σ]` by direct matrix
//! algebra.

use crate::bohm::{
    fill_masked_from_neighbours, GuidanceFlow, NodePolicy, Trajectory, TrajectoryStatus,
    VelocityFieldSample,
};
use crate::error::{Error, Result};
use crate::field::{DensityField, GaussianSpec};
use crate::grid::{Direction, Grid, SpectralOp};
use crate::sample::sample_stacked;
use crate::scalar::{cr, i, C, Real};
use crate::schrodinger::{check_boundary, step_count, Potential};
use crate::stats::{ksum, KahanSum};
use rayon::prelude::*;

/// Physical constants of a spinor run. Natural units set everything to 1.
#[derive(Debug, Clone, Copy)]
pub struct PauliParams<R: Real> {
    pub hbar: R,
    pub mass: R,
    pub charge: R,
    pub light_speed: R,
    /// Magnetic moment μ multiplying `B·σ`.
    pub moment: R,
}

impl<R: Real> PauliParams<R> {
    pub fn natural() -> Self {
        Self {
            hbar: R::one(),
            mass: R::one(),
            charge: R::one(),
            light_speed: R::one(),
            moment: R::one(),
        }
    }
}

/// Branch labels: index 0 carries λ = +ħ/2, index 1 carries λ = −ħ/2.
pub const BRANCHES: usize = 2;

/// Spinor wavefunction on a 1D grid; component `[0]` is the `+ħ/2` branch.
#[derive(Debug, Clone)]
pub struct SpinorField<R: Real> {
    grid: Grid<R>,
    pub values: Vec<[C<R>; 2]>,
    pub time: R,
    pub params: PauliParams<R>,
}

impl<R: Real> SpinorField<R> {
    /// Wrap raw components and normalise over position × branch.
    pub fn new(
        grid: Grid<R>,
        values: Vec<[C<R>; 2]>,
        params: PauliParams<R>,
        time: R,
    ) -> Result<Self> {
        if grid.dims() != 1 {
            return Err(Error::Unsupported("spinor fields are one-dimensional"));
        }
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch { grid: grid.len(), field: values.len() });
        }
        for (f, v) in values.iter().enumerate() {
            if !(v[0].re.is_finite() && v[0].im.is_finite() && v[1].re.is_finite()
                && v[1].im.is_finite())
            {
                return Err(Error::NonFinite { context: "spinor component", index: f });
            }
        }
        let mut out = Self { grid, values, time, params };
        let norm = out.norm();
        if norm == R::zero() {
            return Err(Error::ZeroNorm { norm: 0.0 });
        }
        out.scale(R::one() / norm);
        Ok(out)
    }

    /// Gaussian packet times a constant spinor `(c₊, c₋)` (normalised).
    pub fn from_packet(
        grid: Grid<R>,
        params: PauliParams<R>,
        spec: GaussianSpec<R>,
        coeffs: [C<R>; 2],
    ) -> Result<Self> {
        let sum = coeffs[0].norm_sqr() + coeffs[1].norm_sqr();
        if sum == R::zero() {
            return Err(Error::BadCoefficients { sum: 0.0, tolerance: 0.0 });
        }
        let dims = grid.dims();
        let hbar = params.hbar;
        let values = (0..grid.len())
            .map(|f| {
                let amp = spec.amplitude(dims, hbar, grid.point(f));
                [coeffs[0] * amp, coeffs[1] * amp]
            })
            .collect();
        Self::new(grid, values, params, R::zero())
    }

    pub fn grid(&self) -> &Grid<R> {
        &self.grid
    }

    fn scale(&mut self, s: R) {
        let c = cr(s);
        for v in self.values.iter_mut() {
            v[0] = v[0] * c;
            v[1] = v[1] * c;
        }
    }

    /// `√(Σ_λ ∫ |ψ(x,λ)|² dx)`.
    pub fn norm(&self) -> R {
        let sum = ksum(
            self.values
                .iter()
                .map(|v| v[0].norm_sqr() + v[1].norm_sqr()),
        );
        (sum * self.grid.cell_volume()).sqrt()
    }

    /// Total position density `ρ̃ = ψ†ψ`.
    pub fn total_density(&self) -> DensityField<R> {
        let values = self
            .values
            .iter()
            .map(|v| v[0].norm_sqr() + v[1].norm_sqr())
            .collect();
        DensityField::new(self.grid.clone(), values).expect("finite spinor magnitudes")
    }

    /// Position density of one branch (integrates to that branch's weight).
    pub fn branch_density(&self, branch: usize) -> DensityField<R> {
        let values = self.values.iter().map(|v| v[branch].norm_sqr()).collect();
        DensityField::new(self.grid.clone(), values).expect("finite spinor magnitudes")
    }

    /// `∫|ψ(x,λ)|²dx` per branch.
    pub fn branch_weights(&self) -> [R; 2] {
        let dv = self.grid.cell_volume();
        [
            ksum(self.values.iter().map(|v| v[0].norm_sqr())) * dv,
            ksum(self.values.iter().map(|v| v[1].norm_sqr())) * dv,
        ]
    }

    /// One branch as a plain complex field (not renormalised).
    pub fn component(&self, branch: usize) -> Vec<C<R>> {
        self.values.iter().map(|v| v[branch]).collect()
    }

    /// `⟨S⟩ = (ħ/2) ∫ ψ†σψ dx`, all three components.
    pub fn spin_expectation(&self) -> [R; 3] {
        let dv = self.grid.cell_volume();
        let half_hbar = self.params.hbar / R::lit(2.0);
        let mut sx = KahanSum::new();
        let mut sy = KahanSum::new();
        let mut sz = KahanSum::new();
        for v in &self.values {
            let cross = v[0].conj() * v[1];
            sx.add(R::lit(2.0) * cross.re);
            sy.add(R::lit(2.0) * cross.im);
            sz.add(v[0].norm_sqr() - v[1].norm_sqr());
        }
        [
            half_hbar * sx.value() * dv,
            half_hbar * sy.value() * dv,
            half_hbar * sz.value() * dv,
        ]
    }
}

/// Vector potential presets. Spatially varying `A` is rejected: the cross
/// term `A·∇` then no longer diagonalises in either position or wavenumber
/// space and an untested first-order splitting would hide its error.
#[derive(Debug, Clone, PartialEq)]
pub enum VectorPotential<R: Real> {
    Zero,
    Uniform([R; 3]),
}

impl<R: Real> VectorPotential<R> {
    fn components(&self) -> Result<[R; 3]> {
        match self {
            VectorPotential::Zero => Ok([R::zero(); 3]),
            VectorPotential::Uniform(a) => {
                if a.iter().any(|c| !c.is_finite()) {
                    return Err(Error::NonFinite { context: "vector potential", index: 0 });
                }
                Ok(*a)
            }
        }
    }
}

/// Magnetic field presets (supplied directly; no consistency with `A` is
/// enforced).
#[derive(Debug, Clone, PartialEq)]
pub enum MagneticField<R: Real> {
    Zero,
    Uniform([R; 3]),
    /// `B = (0, 0, base + gradient·x)` — the Stern–Gerlach profile, acting
    /// as the branch-dependent potential `±μ(base + gradient·x)`.
    LinearAlongZ { base: R, gradient: R },
    /// Arbitrary per-cell field.
    Sampled(Vec<[R; 3]>),
}

impl<R: Real> MagneticField<R> {
    /// Per-cell samples, validated finite.
    pub fn sample_on(&self, grid: &Grid<R>) -> Result<Vec<[R; 3]>> {
        let values: Vec<[R; 3]> = match self {
            MagneticField::Zero => vec![[R::zero(); 3]; grid.len()],
            MagneticField::Uniform(b) => vec![*b; grid.len()],
            MagneticField::LinearAlongZ { base, gradient } => (0..grid.len())
                .map(|f| [R::zero(), R::zero(), *base + *gradient * grid.point(f)[0]])
                .collect(),
            MagneticField::Sampled(values) => {
                if values.len() != grid.len() {
                    return Err(Error::LengthMismatch {
                        grid: grid.len(),
                        field: values.len(),
                    });
                }
                values.clone()
            }
        };
        for (f, b) in values.iter().enumerate() {
            if b.iter().any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { context: "magnetic field", index: f });
            }
        }
        Ok(values)
    }
}

/// External fields of a spinor run.
#[derive(Debug, Clone)]
pub struct FieldConfig<R: Real> {
    pub scalar: Potential<R>,
    pub vector: VectorPotential<R>,
    pub magnetic: MagneticField<R>,
}

impl<R: Real> FieldConfig<R> {
    pub fn free() -> Self {
        Self {
            scalar: Potential::Free,
            vector: VectorPotential::Zero,
            magnetic: MagneticField::Zero,
        }
    }

    pub fn uniform_b(b: [R; 3]) -> Self {
        Self {
            scalar: Potential::Free,
            vector: VectorPotential::Zero,
            magnetic: MagneticField::Uniform(b),
        }
    }
}

/// Exact 2×2 unitary `exp(-i(τ/ħ)(V·I + μ B·σ))`:
/// global phase `e^{-iVτ/ħ}` times `cos θ·I − i sin θ·(n̂·σ)`, `θ = μ|B|τ/ħ`.
fn local_factor<R: Real>(v: R, b: [R; 3], tau: R, hbar: R, moment: R) -> [[C<R>; 2]; 2] {
    let phase = C::from_polar(R::one(), -v * tau / hbar);
    let b_norm = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if b_norm == R::zero() {
        return [[phase, C::new(R::zero(), R::zero())], [C::new(R::zero(), R::zero()), phase]];
    }
    let theta = moment * b_norm * tau / hbar;
    let (s, c) = (theta.sin(), theta.cos());
    let n = [b[0] / b_norm, b[1] / b_norm, b[2] / b_norm];
    let cos_term = C::new(c, R::zero());
    let m00 = cos_term - i::<R>() * cr(s * n[2]);
    let m11 = cos_term + i::<R>() * cr(s * n[2]);
    let m01 = -i::<R>() * cr(s) * C::new(n[0], -n[1]);
    let m10 = -i::<R>() * cr(s) * C::new(n[0], n[1]);
    [[phase * m00, phase * m01], [phase * m10, phase * m11]]
}

/// Cached Strang factors for one `(grid, fields, Δt)` combination.
pub struct PauliStepper<R: Real> {
    op: SpectralOp<R>,
    /// Exact kinetic phase per wavenumber: `(ħk − eA₁/c)²/2mħ` plus the
    /// constant `e²(A₂²+A₃²)/2mc²ħ` from the transverse components.
    kinetic_phase: Vec<C<R>>,
    /// Half-step local 2×2 unitaries, one per point.
    local_half: Vec<[[C<R>; 2]; 2]>,
    dt: R,
}

impl<R: Real> PauliStepper<R> {
    pub fn new(
        grid: &Grid<R>,
        params: &PauliParams<R>,
        fields: &FieldConfig<R>,
        dt: R,
    ) -> Result<Self> {
        if grid.dims() != 1 {
            return Err(Error::Unsupported("spinor fields are one-dimensional"));
        }
        if !(dt.is_finite()) || dt == R::zero() {
            return Err(Error::BadTimeStep { dt: dt.as_f64() });
        }
        let a = fields.vector.components()?;
        let v = fields.scalar.sample_at(grid, [params.mass; 2], R::zero())?;
        let b = fields.magnetic.sample_on(grid)?;
        let op = SpectralOp::new(grid);
        let coupling = params.charge / params.light_speed;
        let transverse = coupling * coupling * (a[1] * a[1] + a[2] * a[2]);
        let two_m_hbar = R::lit(2.0) * params.mass * params.hbar;
        let kinetic_phase = op
            .wavenumbers(0)
            .iter()
            .map(|&k| {
                let p = params.hbar * k - coupling * a[0];
                C::from_polar(R::one(), -dt * (p * p + transverse) / two_m_hbar)
            })
            .collect();
        let tau = dt / R::lit(2.0);
        let local_half = (0..grid.len())
            .map(|f| local_factor(v[f], b[f], tau, params.hbar, params.moment))
            .collect();
        Ok(Self { op, kinetic_phase, local_half, dt })
    }

    fn apply_local(&self, values: &mut [[C<R>; 2]]) {
        for (v, m) in values.iter_mut().zip(&self.local_half) {
            let plus = m[0][0] * v[0] + m[0][1] * v[1];
            let minus = m[1][0] * v[0] + m[1][1] * v[1];
            *v = [plus, minus];
        }
    }

    /// One Strang step: half local, exact kinetic per component, half local.
    pub fn step(&self, psi: &mut SpinorField<R>) {
        self.apply_local(&mut psi.values);
        for branch in 0..BRANCHES {
            let mut comp: Vec<C<R>> = psi.values.iter().map(|v| v[branch]).collect();
            self.op.transform(&mut comp, Direction::Forward);
            for (c, phase) in comp.iter_mut().zip(&self.kinetic_phase) {
                *c = *c * *phase;
            }
            self.op.transform(&mut comp, Direction::Inverse);
            for (v, c) in psi.values.iter_mut().zip(comp) {
                v[branch] = c;
            }
        }
        self.apply_local(&mut psi.values);
        psi.time = psi.time + self.dt;
    }
}

/// One-off Strang step (cached steppers are cheaper inside loops).
pub fn pauli_step<R: Real>(
    psi: &mut SpinorField<R>,
    fields: &FieldConfig<R>,
    dt: R,
) -> Result<()> {
    let stepper = PauliStepper::new(psi.grid(), &psi.params, fields, dt)?;
    stepper.step(psi);
    Ok(())
}

/// Stored spinor evolution.
#[derive(Debug, Clone)]
pub struct PauliRecord<R: Real> {
    pub snapshots: Vec<SpinorField<R>>,
    pub dt: R,
    pub stride: usize,
    /// Max |‖Ψ‖ − 1| observed over all steps.
    pub norm_drift: R,
    /// Set when probability reached the box edge (results suspect).
    pub boundary_warning: bool,
}

impl<R: Real> PauliRecord<R> {
    pub fn grid(&self) -> &Grid<R> {
        self.snapshots[0].grid()
    }

    pub fn times(&self) -> Vec<R> {
        self.snapshots.iter().map(|s| s.time).collect()
    }

    pub fn final_state(&self) -> &SpinorField<R> {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    pub fn snapshot_dt(&self) -> R {
        self.dt * R::from_usize(self.stride).unwrap()
    }
}

/// Evolve a spinor, storing every `stride`-th state (the initial state
/// included). `stride` must divide the step count.
pub fn evolve_pauli<R: Real>(
    psi0: &SpinorField<R>,
    fields: &FieldConfig<R>,
    duration: R,
    dt: R,
    stride: usize,
) -> Result<PauliRecord<R>> {
    let steps = step_count(duration, dt)?;
    if stride == 0 || steps % stride != 0 {
        return Err(Error::Config(format!(
            "snapshot stride {stride} must divide the step count {steps}"
        )));
    }
    let stepper = PauliStepper::new(psi0.grid(), &psi0.params, fields, dt)?;
    let mut psi = psi0.clone();
    let mut snapshots = vec![psi.clone()];
    let mut norm_drift = R::zero();
    let mut boundary_warning = false;
    for step in 1..=steps {
        stepper.step(&mut psi);
        norm_drift = norm_drift.max((psi.norm() - R::one()).abs());
        if step % stride == 0 {
            if !boundary_warning && check_boundary(&psi.total_density()) {
                log::warn!("spinor probability reached the box edge at t = {}", psi.time);
                boundary_warning = true;
            }
            snapshots.push(psi.clone());
        }
    }
    Ok(PauliRecord { snapshots, dt, stride, norm_drift, boundary_warning })
}

/// Position velocity of the total current:
/// `v = (ħ/m)·Im(ψ†∂ψ)/ψ†ψ − (e/mc)A₁`, nodes regularised as in the scalar
/// guidance law.
pub fn position_velocity_field<R: Real>(
    psi: &SpinorField<R>,
    fields: &FieldConfig<R>,
    policy: &NodePolicy<R>,
    op: &SpectralOp<R>,
) -> Result<VelocityFieldSample<R>> {
    let a = fields.vector.components()?;
    let drift = -psi.params.charge * a[0] / (psi.params.mass * psi.params.light_speed);
    let grad = [
        op.derivative_axis(&psi.component(0), 0),
        op.derivative_axis(&psi.component(1), 0),
    ];
    let rho: Vec<R> = psi
        .values
        .iter()
        .map(|v| v[0].norm_sqr() + v[1].norm_sqr())
        .collect();
    Ok(current_to_sample(psi, policy, &rho, |f| {
        (psi.values[f][0].conj() * grad[0][f]).im + (psi.values[f][1].conj() * grad[1][f]).im
    }, drift))
}

/// Velocity of one branch's own current (the guidance field on the doubled
/// configuration space). Equals the total field whenever both branches share
/// one spatial profile; in a Stern–Gerlach field it keeps each branch's
/// trajectories with their branch.
pub fn branch_velocity_field<R: Real>(
    psi: &SpinorField<R>,
    fields: &FieldConfig<R>,
    policy: &NodePolicy<R>,
    op: &SpectralOp<R>,
    branch: usize,
) -> Result<VelocityFieldSample<R>> {
    let a = fields.vector.components()?;
    let drift = -psi.params.charge * a[0] / (psi.params.mass * psi.params.light_speed);
    let grad = op.derivative_axis(&psi.component(branch), 0);
    let rho: Vec<R> = psi.values.iter().map(|v| v[branch].norm_sqr()).collect();
    Ok(current_to_sample(psi, policy, &rho, |f| {
        (psi.values[f][branch].conj() * grad[f]).im
    }, drift))
}

fn current_to_sample<R: Real>(
    psi: &SpinorField<R>,
    policy: &NodePolicy<R>,
    rho: &[R],
    im_current: impl Fn(usize) -> R,
    drift: R,
) -> VelocityFieldSample<R> {
    let grid = psi.grid().clone();
    let rho_max = rho.iter().copied().fold(R::zero(), R::max);
    let eps = policy.eps_rel * rho_max;
    let mask: Vec<bool> = rho.iter().map(|&r| r < eps || rho_max == R::zero()).collect();
    let scale = psi.params.hbar / psi.params.mass;
    let mut v: Vec<[R; 2]> = (0..grid.len())
        .map(|f| {
            if mask[f] {
                [R::zero(); 2]
            } else {
                [scale * im_current(f) / rho[f] + drift, R::zero()]
            }
        })
        .collect();
    fill_masked_from_neighbours(&grid, &mut v, &mask, policy.v_max);
    VelocityFieldSample { grid, time: psi.time, v, mask }
}

/// Spin-transport rate per point and branch: `v_S(x,λ) = J_S(x,λ)/|ψ(x,λ)|²`
/// where `J_S(x,λ) = Re[ψ*(x,λ)·(CΨ)(x,λ)]` and `C = (iħ)⁻¹[S₃, μB·σ]`,
/// formed by explicit matrix products per point. Branch-node cells are
/// masked and report rate 0.
#[derive(Debug, Clone)]
pub struct SpinVelocityField<R: Real> {
    pub grid: Grid<R>,
    pub time: R,
    /// `v[f][branch]`.
    pub v: Vec<[R; 2]>,
    pub mask: Vec<[bool; 2]>,
}

/// 2×2 complex helpers for the commutator path.
type Mat2<R> = [[C<R>; 2]; 2];

fn mat_mul<R: Real>(a: &Mat2<R>, b: &Mat2<R>) -> Mat2<R> {
    let mut out = [[C::new(R::zero(), R::zero()); 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, v) in row.iter_mut().enumerate() {
            *v = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

fn mat_sub<R: Real>(a: &Mat2<R>, b: &Mat2<R>) -> Mat2<R> {
    let mut out = *a;
    for r in 0..2 {
        for c in 0..2 {
            out[r][c] = a[r][c] - b[r][c];
        }
    }
    out
}

fn mat_scale<R: Real>(a: &Mat2<R>, s: C<R>) -> Mat2<R> {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v = *v * s;
        }
    }
    out
}

fn mat_vec<R: Real>(a: &Mat2<R>, v: &[C<R>; 2]) -> [C<R>; 2] {
    [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
}

fn zero_c<R: Real>() -> C<R> {
    C::new(R::zero(), R::zero())
}

/// `μ B·σ` at one point.
fn spin_hamiltonian<R: Real>(b: [R; 3], moment: R) -> Mat2<R> {
    let m = moment;
    [
        [C::new(m * b[2], R::zero()), C::new(m * b[0], -m * b[1])],
        [C::new(m * b[0], m * b[1]), C::new(-m * b[2], R::zero())],
    ]
}

fn s3_matrix<R: Real>(hbar: R) -> Mat2<R> {
    let half = hbar / R::lit(2.0);
    [[C::new(half, R::zero()), zero_c()], [zero_c(), C::new(-half, R::zero())]]
}

/// `C = (iħ)⁻¹ [S₃, μB·σ]` at one point, by explicit products.
fn transport_matrix<R: Real>(b: [R; 3], hbar: R, moment: R) -> Mat2<R> {
    let s3 = s3_matrix(hbar);
    let h = spin_hamiltonian(b, moment);
    let comm = mat_sub(&mat_mul(&s3, &h), &mat_mul(&h, &s3));
    // (iħ)⁻¹ = −i/ħ
    mat_scale(&comm, -i::<R>() * cr(R::one() / hbar))
}

pub fn spin_velocity<R: Real>(
    psi: &SpinorField<R>,
    fields: &FieldConfig<R>,
    policy: &NodePolicy<R>,
) -> Result<SpinVelocityField<R>> {
    let grid = psi.grid().clone();
    let b = fields.magnetic.sample_on(&grid)?;
    let rho_max = psi
        .values
        .iter()
        .map(|v| v[0].norm_sqr().max(v[1].norm_sqr()))
        .fold(R::zero(), R::max);
    let eps = policy.eps_rel * rho_max;
    let mut v = vec![[R::zero(); 2]; grid.len()];
    let mut mask = vec![[false; 2]; grid.len()];
    let mut total_j = KahanSum::new();
    for f in 0..grid.len() {
        let c = transport_matrix(b[f], psi.params.hbar, psi.params.moment);
        let applied = mat_vec(&c, &psi.values[f]);
        for branch in 0..BRANCHES {
            let j = (psi.values[f][branch].conj() * applied[branch]).re;
            total_j.add(j);
            let rho = psi.values[f][branch].norm_sqr();
            if rho < eps {
                mask[f][branch] = true;
            } else {
                v[f][branch] = j / rho;
            }
        }
    }
    // Global transport identity: Σ_λ ∫ J_S dx must equal (iħ)⁻¹⟨[S₃,H]⟩.
    let lhs = total_j.value() * grid.cell_volume();
    let rhs = spin_expectation_rate(psi, fields)?;
    let scale = lhs.abs().max(rhs.abs()).max(R::one());
    if (lhs - rhs).abs() > R::lit(1e-8) * scale {
        log::warn!(
            "spin transport identity violated: Σ∫J_S = {lhs:e} vs (iħ)⁻¹⟨[S₃,H]⟩ = {rhs:e}"
        );
    }
    Ok(SpinVelocityField { grid, time: psi.time, v, mask })
}

/// `(iħ)⁻¹⟨[S₃, H]⟩` evaluated the long way round: apply `S₃(HΨ)` and
/// `H(S₃Ψ)` separately and subtract the inner products. Only the `μB·σ`
/// part of `H` contributes — every other term commutes with `S₃`.
pub fn spin_expectation_rate<R: Real>(
    psi: &SpinorField<R>,
    fields: &FieldConfig<R>,
) -> Result<R> {
    let grid = psi.grid();
    let b = fields.magnetic.sample_on(grid)?;
    let s3 = s3_matrix(psi.params.hbar);
    let mut sh = KahanSum::new();
    let mut hs = KahanSum::new();
    for f in 0..grid.len() {
        let h = spin_hamiltonian(b[f], psi.params.moment);
        let a = mat_vec(&s3, &mat_vec(&h, &psi.values[f]));
        let c = mat_vec(&h, &mat_vec(&s3, &psi.values[f]));
        let pa = psi.values[f][0].conj() * a[0] + psi.values[f][1].conj() * a[1];
        let pc = psi.values[f][0].conj() * c[0] + psi.values[f][1].conj() * c[1];
        sh.add(pa.im);
        hs.add(pc.im);
    }
    // ⟨C⟩ = (−i/ħ)(⟨S₃H⟩ − ⟨HS₃⟩): the real part is (Im⟨S₃H⟩ − Im⟨HS₃⟩)/ħ.
    Ok((sh.value() - hs.value()) * grid.cell_volume() / psi.params.hbar)
}

/// `s(x) = (ħ/2)·ψ†σψ / ψ†ψ`; masked where the total density is below the
/// node floor.
#[derive(Debug, Clone)]
pub struct SpinVectorField<R: Real> {
    pub grid: Grid<R>,
    pub values: Vec<[R; 3]>,
    pub mask: Vec<bool>,
}

pub fn spin_vector_field<R: Real>(psi: &SpinorField<R>) -> SpinVectorField<R> {
    let grid = psi.grid().clone();
    let rho: Vec<R> = psi
        .values
        .iter()
        .map(|v| v[0].norm_sqr() + v[1].norm_sqr())
        .collect();
    let rho_max = rho.iter().copied().fold(R::zero(), R::max);
    let eps = R::lit(1e-12) * rho_max;
    let half_hbar = psi.params.hbar / R::lit(2.0);
    let mut values = vec![[R::zero(); 3]; grid.len()];
    let mut mask = vec![true; grid.len()];
    for f in 0..grid.len() {
        if rho[f] < eps {
            mask[f] = false;
            continue;
        }
        let cross = psi.values[f][0].conj() * psi.values[f][1];
        values[f] = [
            half_hbar * R::lit(2.0) * cross.re / rho[f],
            half_hbar * R::lit(2.0) * cross.im / rho[f],
            half_hbar * (psi.values[f][0].norm_sqr() - psi.values[f][1].norm_sqr()) / rho[f],
        ];
    }
    SpinVectorField { grid, values, mask }
}

/// Time-interpolated spin-rate flow, the Σ-space companion of
/// [`GuidanceFlow`].
pub struct SpinFlow<R: Real> {
    grid: Grid<R>,
    times: Vec<R>,
    fields: Vec<SpinVelocityField<R>>,
}

impl<R: Real> SpinFlow<R> {
    /// Rate at `(t, x, branch)` plus a flag for node-masked stencil cells.
    pub fn rate(&self, t: R, x: R, branch: usize) -> (R, bool) {
        let last = self.times.len() - 1;
        let t0 = self.times[0];
        let dt = if last == 0 { R::one() } else { self.times[1] - t0 };
        let raw = ((t - t0) / dt).floor().as_f64() as i64;
        let idx = raw.clamp(0, last.max(1) as i64 - 1) as usize;
        let theta = ((t - self.times[idx]) / dt).max(R::zero()).min(R::one());
        let (ra, ma) = self.sample_spatial(idx, x, branch);
        if last == 0 {
            return (ra, ma);
        }
        let (rb, mb) = self.sample_spatial(idx + 1, x, branch);
        ((R::one() - theta) * ra + theta * rb, ma || mb)
    }

    fn sample_spatial(&self, snap: usize, x: R, branch: usize) -> (R, bool) {
        let field = &self.fields[snap];
        let g = &self.grid;
        let (i0, fx) = g.locate(0, x);
        let i1 = (i0 + 1) % g.points(0);
        let one = R::one();
        let value = (one - fx) * field.v[i0][branch] + fx * field.v[i1][branch];
        (value, field.mask[i0][branch] || field.mask[i1][branch])
    }
}

/// All guidance data of a spinor run: one positional flow per branch plus
/// the spin-rate flow.
pub struct BeableFlows<R: Real> {
    pub branch: [GuidanceFlow<R>; 2],
    pub spin: SpinFlow<R>,
    hbar: R,
}

/// Build the flows from a stored evolution.
pub fn beable_flows<R: Real>(
    record: &PauliRecord<R>,
    fields: &FieldConfig<R>,
    policy: &NodePolicy<R>,
) -> Result<BeableFlows<R>> {
    let grid = record.grid().clone();
    let op = SpectralOp::new(&grid);
    let times = record.times();
    let mut branch_fields: [Vec<VelocityFieldSample<R>>; 2] = [Vec::new(), Vec::new()];
    let mut spin_fields = Vec::new();
    for snap in &record.snapshots {
        for (branch, store) in branch_fields.iter_mut().enumerate() {
            store.push(branch_velocity_field(snap, fields, policy, &op, branch)?);
        }
        spin_fields.push(spin_velocity(snap, fields, policy)?);
    }
    let [plus, minus] = branch_fields;
    Ok(BeableFlows {
        branch: [
            GuidanceFlow::from_fields(grid.clone(), times.clone(), plus)?,
            GuidanceFlow::from_fields(grid.clone(), times.clone(), minus)?,
        ],
        spin: SpinFlow { grid, times, fields: spin_fields },
        hbar: record.snapshots[0].params.hbar,
    })
}

/// A position trajectory with its spin be-able series.
#[derive(Debug, Clone)]
pub struct SpinTrajectory<R: Real> {
    pub base: Trajectory<R>,
    /// Initial branch eigenvalue, ±ħ/2.
    pub lambda0: R,
    /// `s₃(t)` on the same time lattice as the base trajectory.
    pub s3: Vec<R>,
}

impl<R: Real> SpinTrajectory<R> {
    /// Branch index nearest the current be-able value.
    pub fn branch_at(&self, idx: usize) -> usize {
        if self.s3[idx] >= R::zero() {
            0
        } else {
            1
        }
    }
}

fn nearest_branch<R: Real>(s3: R) -> usize {
    if s3 >= R::zero() {
        0
    } else {
        1
    }
}

/// Co-integrate `dx/dt = v_branch(x; λ(s₃))` and `ds₃/dt = v_S(x, λ(s₃))`
/// with RK4 on the interpolated flows; `s₃` is clamped to `[−ħ/2, ħ/2]`
/// after every substep. Node or boundary events flag the trajectory exactly
/// as in the scalar integrator.
pub fn integrate_spin_beable<R: Real>(
    flows: &BeableFlows<R>,
    y0: R,
    lambda0: R,
    substeps: usize,
) -> SpinTrajectory<R> {
    let times = flows.branch[0].times().to_vec();
    let grid = flows.branch[0].grid().clone();
    let half_hbar = flows.hbar / R::lit(2.0);
    let sub = substeps.max(1);
    let mut x = y0;
    let mut s = lambda0;
    let mut points = vec![[x, R::zero()]];
    let mut s3 = vec![s];
    let mut out_times = vec![times[0]];
    let mut touched_node = false;
    let mut status = TrajectoryStatus::Complete;
    'windows: for w in 0..times.len().saturating_sub(1) {
        let h_full = (times[w + 1] - times[w]) / R::from_usize(sub).unwrap();
        let mut t = times[w];
        for _ in 0..sub {
            let (nx, ns, touched) = rk4_beable(flows, t, x, s, h_full);
            touched_node |= touched;
            x = nx;
            s = ns.max(-half_hbar).min(half_hbar);
            t = t + h_full;
            if !grid.contains([x, R::zero()]) {
                status = TrajectoryStatus::BoundaryExit;
                break 'windows;
            }
        }
        points.push([x, R::zero()]);
        s3.push(s);
        out_times.push(times[w + 1]);
    }
    if status == TrajectoryStatus::Complete && touched_node {
        status = TrajectoryStatus::NodeRegularized;
    }
    SpinTrajectory {
        base: Trajectory { x0: [y0, R::zero()], times: out_times, points, status },
        lambda0,
        s3,
    }
}

fn rk4_beable<R: Real>(
    flows: &BeableFlows<R>,
    t: R,
    x: R,
    s: R,
    h: R,
) -> (R, R, bool) {
    let mut touched = false;
    let mut eval = |t: R, x: R, s: R| -> (R, R) {
        let branch = nearest_branch(s);
        let (v, m1) = flows.branch[branch].velocity(t, [x, R::zero()]);
        let (r, m2) = flows.spin.rate(t, x, branch);
        touched |= m1 || m2;
        (v[0], r)
    };
    let half = h / R::lit(2.0);
    let (k1x, k1s) = eval(t, x, s);
    let (k2x, k2s) = eval(t + half, x + half * k1x, s + half * k1s);
    let (k3x, k3s) = eval(t + half, x + half * k2x, s + half * k2s);
    let (k4x, k4s) = eval(t + h, x + h * k3x, s + h * k3s);
    let sixth = h / R::lit(6.0);
    let two = R::lit(2.0);
    (
        x + sixth * (k1x + two * k2x + two * k3x + k4x),
        s + sixth * (k1s + two * k2s + two * k3s + k4s),
        touched,
    )
}

/// Seeded ensemble of spin be-ables drawn from `|ψ(x,λ)|²` over the doubled
/// configuration space of the record's initial snapshot.
#[derive(Debug, Clone)]
pub struct SpinEnsemble<R: Real> {
    pub seed: u64,
    pub times: Vec<R>,
    pub trajectories: Vec<SpinTrajectory<R>>,
}

impl<R: Real> SpinEnsemble<R> {
    /// Mean of `s₃` at snapshot `idx` over trajectories alive at that index.
    pub fn mean_s3(&self, idx: usize) -> R {
        let values: Vec<R> = self
            .trajectories
            .iter()
            .filter(|t| t.s3.len() > idx)
            .map(|t| t.s3[idx])
            .collect();
        ksum(values.iter().copied()) / R::from_usize(values.len().max(1)).unwrap()
    }
}

pub fn run_spin_ensemble<R: Real>(
    record: &PauliRecord<R>,
    fields: &FieldConfig<R>,
    policy: &NodePolicy<R>,
    n: usize,
    seed: u64,
    substeps: usize,
) -> Result<SpinEnsemble<R>> {
    let flows = beable_flows(record, fields, policy)?;
    let initial = &record.snapshots[0];
    let grid = initial.grid();
    let weights: Vec<R> = (0..BRANCHES)
        .flat_map(|b| initial.values.iter().map(move |v| v[b].norm_sqr()))
        .collect();
    let draws = sample_stacked(grid, &weights, BRANCHES, n, seed)?;
    let half_hbar = initial.params.hbar / R::lit(2.0);
    let trajectories: Vec<SpinTrajectory<R>> = draws
        .par_iter()
        .map(|&(p, branch)| {
            let lambda0 = if branch == 0 { half_hbar } else { -half_hbar };
            integrate_spin_beable(&flows, p[0], lambda0, substeps)
        })
        .collect();
    Ok(SpinEnsemble { seed, times: record.times(), trajectories })
}

/// Stern–Gerlach run description: a packet times `(c₊, c₋)` entering the
/// linear field `B₃(x) = gradient·x`.
#[derive(Debug, Clone)]
pub struct SternGerlachConfig<R: Real> {
    pub grid: Grid<R>,
    pub params: PauliParams<R>,
    pub packet: GaussianSpec<R>,
    pub coeffs: [C<R>; 2],
    pub gradient: R,
    pub duration: R,
    pub dt: R,
    pub stride: usize,
    pub trajectories: usize,
    pub substeps: usize,
    pub seed: u64,
}

/// Outcome statistics of a Stern–Gerlach run.
#[derive(Debug)]
pub struct SternGerlachReport<R: Real> {
    pub record: PauliRecord<R>,
    pub ensemble: SpinEnsemble<R>,
    /// Fraction of draws that started on the +ħ/2 branch.
    pub up_fraction: R,
    /// Born weight |c₊|² after normalisation.
    pub expected_up: R,
    /// True iff every s₃ series is bitwise constant.
    pub s3_constant: bool,
    /// Mean position of each λ₀-population per snapshot: `[plus, minus]`.
    pub mean_positions: [Vec<R>; 2],
    /// `mean_minus − mean_plus` per snapshot (the +branch is pushed to −x
    /// for a positive gradient).
    pub separations: Vec<R>,
    /// Overlap coefficient `Σ_b min(p⁺_b, p⁻_b)` of the two populations'
    /// final-position histograms.
    pub population_overlap: R,
}

pub fn stern_gerlach_run<R: Real>(
    config: &SternGerlachConfig<R>,
) -> Result<SternGerlachReport<R>> {
    let fields = FieldConfig {
        scalar: Potential::Free,
        vector: VectorPotential::Zero,
        magnetic: MagneticField::LinearAlongZ { base: R::zero(), gradient: config.gradient },
    };
    let psi0 = SpinorField::from_packet(
        config.grid.clone(),
        config.params,
        config.packet,
        config.coeffs,
    )?;
    let norm_sq = config.coeffs[0].norm_sqr() + config.coeffs[1].norm_sqr();
    let expected_up = config.coeffs[0].norm_sqr() / norm_sq;
    let record = evolve_pauli(&psi0, &fields, config.duration, config.dt, config.stride)?;
    let policy = NodePolicy::for_run(&config.grid, config.duration);
    let ensemble = run_spin_ensemble(
        &record,
        &fields,
        &policy,
        config.trajectories,
        config.seed,
        config.substeps,
    )?;

    let n = ensemble.trajectories.len();
    let ups = ensemble
        .trajectories
        .iter()
        .filter(|t| t.lambda0 > R::zero())
        .count();
    let up_fraction = R::from_usize(ups).unwrap() / R::from_usize(n).unwrap();
    let s3_constant = ensemble
        .trajectories
        .iter()
        .all(|t| t.s3.iter().all(|&s| s == t.lambda0));

    let snapshots = record.snapshots.len();
    let mut mean_positions = [vec![R::zero(); snapshots], vec![R::zero(); snapshots]];
    let mut separations = vec![R::zero(); snapshots];
    for (pop, means) in mean_positions.iter_mut().enumerate() {
        let members: Vec<&SpinTrajectory<R>> = ensemble
            .trajectories
            .iter()
            .filter(|t| (t.lambda0 > R::zero()) == (pop == 0))
            .collect();
        for (idx, mean) in means.iter_mut().enumerate() {
            let vals: Vec<R> = members
                .iter()
                .filter(|t| t.base.points.len() > idx)
                .map(|t| t.base.points[idx][0])
                .collect();
            *mean = ksum(vals.iter().copied()) / R::from_usize(vals.len().max(1)).unwrap();
        }
    }
    for idx in 0..snapshots {
        separations[idx] = mean_positions[1][idx] - mean_positions[0][idx];
    }

    let finals: [Vec<R>; 2] = [
        ensemble
            .trajectories
            .iter()
            .filter(|t| t.lambda0 > R::zero())
            .map(|t| t.base.final_point()[0])
            .collect(),
        ensemble
            .trajectories
            .iter()
            .filter(|t| t.lambda0 < R::zero())
            .map(|t| t.base.final_point()[0])
            .collect(),
    ];
    let population_overlap = histogram_overlap(&finals[0], &finals[1], &config.grid);

    Ok(SternGerlachReport {
        record,
        ensemble,
        up_fraction,
        expected_up,
        s3_constant,
        mean_positions,
        separations,
        population_overlap,
    })
}

/// Overlap coefficient of two normalised 64-bin histograms over the box.
fn histogram_overlap<R: Real>(a: &[R], b: &[R], grid: &Grid<R>) -> R {
    if a.is_empty() || b.is_empty() {
        return R::zero();
    }
    let bins = 64;
    let half = grid.extent(0) / R::lit(2.0);
    let ha = crate::stats::histogram(a, bins, -half, half);
    let hb = crate::stats::histogram(b, bins, -half, half);
    let (na, nb) = (R::from_usize(a.len()).unwrap(), R::from_usize(b.len()).unwrap());
    let mut overlap = KahanSum::new();
    for (ca, cb) in ha.iter().zip(&hb) {
        let pa = R::from_usize(*ca).unwrap() / na;
        let pb = R::from_usize(*cb).unwrap() / nb;
        overlap.add(pa.min(pb));
    }
    overlap.value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schrodinger::evolve;
    use crate::stats::mean_and_se;
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn line(n: usize, l: f64) -> Grid<f64> {
        Grid::line(n, l).unwrap()
    }

    fn packet_spinor(
        grid: &Grid<f64>,
        params: PauliParams<f64>,
        coeffs: [C<f64>; 2],
    ) -> SpinorField<f64> {
        SpinorField::from_packet(
            grid.clone(),
            params,
            GaussianSpec::one_d(0.0, 1.0, 0.0),
            coeffs,
        )
        .unwrap()
    }

    #[test]
    fn zero_field_components_decouple_to_the_scalar_solver() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        let coeffs = [C::new(0.8, 0.0), C::new(0.0, 0.6)];
        let psi0 = packet_spinor(&grid, params, coeffs);
        let fields = FieldConfig {
            scalar: Potential::harmonic_1d(1.0),
            vector: VectorPotential::Zero,
            magnetic: MagneticField::Zero,
        };
        let record = evolve_pauli(&psi0, &fields, 0.2, 1e-3, 200).unwrap();
        assert!(record.norm_drift <= 1e-11 * 200.0);

        let scalar0 = crate::field::gaussian_packet(
            grid.clone(),
            1.0,
            [1.0, 1.0],
            GaussianSpec::one_d(0.0, 1.0, 0.0),
        )
        .unwrap();
        let scalar = evolve(&scalar0, &Potential::harmonic_1d(1.0), 0.2, 1e-3, 200).unwrap();
        let spinor_t = record.final_state();
        let scalar_t = scalar.final_state();
        for f in 0..grid.len() {
            for branch in 0..BRANCHES {
                let expect = coeffs[branch] * scalar_t.values[f];
                let diff = (spinor_t.values[f][branch] - expect).norm();
                assert!(diff <= 1e-10, "cell {f} branch {branch}: diff {diff:.2e}");
            }
        }
    }

    #[test]
    fn uniform_bz_spins_the_branch_phases_only() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        let coeffs = [C::new(0.6, 0.0), C::new(0.8, 0.0)];
        let psi0 = packet_spinor(&grid, params, coeffs);
        let b = 2.0;
        let fields = FieldConfig::uniform_b([0.0, 0.0, b]);
        let t = 0.3;
        let record = evolve_pauli(&psi0, &fields, t, 1e-3, 300).unwrap();
        let spinor_t = record.final_state();

        let w = spinor_t.branch_weights();
        assert_relative_eq!(w[0], 0.36, epsilon = 1e-10);
        assert_relative_eq!(w[1], 0.64, epsilon = 1e-10);

        // Against the scalar evolution times the exact branch phases e^{∓iμBt/ħ}.
        let scalar0 = crate::field::gaussian_packet(
            grid.clone(),
            1.0,
            [1.0, 1.0],
            GaussianSpec::one_d(0.0, 1.0, 0.0),
        )
        .unwrap();
        let scalar = evolve(&scalar0, &Potential::Free, t, 1e-3, 300).unwrap();
        let scalar_t = scalar.final_state();
        for f in 0..grid.len() {
            for (branch, sign) in [(0usize, -1.0f64), (1, 1.0)] {
                let phase = C::from_polar(1.0, sign * b * t);
                let expect = coeffs[branch] * scalar_t.values[f] * phase;
                let diff = (spinor_t.values[f][branch] - expect).norm();
                assert!(diff <= 1e-10, "cell {f} branch {branch}: diff {diff:.2e}");
            }
        }
    }

    #[test]
    fn transverse_field_precesses_the_spin_expectation() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        let psi0 = packet_spinor(&grid, params, [C::new(1.0, 0.0), C::new(0.0, 0.0)]);
        let b = 0.7;
        let fields = FieldConfig::uniform_b([b, 0.0, 0.0]);
        let record = evolve_pauli(&psi0, &fields, 1.0, 1e-3, 100).unwrap();
        for snap in &record.snapshots {
            let s = snap.spin_expectation();
            let expect = 0.5 * (2.0 * b * snap.time).cos();
            assert!(
                (s[2] - expect).abs() <= 1e-6,
                "t = {}: ⟨S₃⟩ = {} vs {expect}",
                snap.time,
                s[2]
            );
        }
    }

    #[test]
    fn single_branch_plane_wave_moves_at_hbar_k_over_m() {
        let l = 8.0 * std::f64::consts::PI;
        let grid = line(64, l);
        let k = 2.0 * std::f64::consts::PI * 4.0 / l;
        let params = PauliParams { mass: 1.7, ..PauliParams::natural() };
        let values: Vec<[C<f64>; 2]> = (0..grid.len())
            .map(|f| [C::from_polar(1.0, k * grid.point(f)[0]), C::new(0.0, 0.0)])
            .collect();
        let psi = SpinorField::new(grid.clone(), values, params, 0.0).unwrap();
        let policy = NodePolicy::for_run(&grid, 1.0);
        let op = SpectralOp::new(&grid);
        let sample =
            position_velocity_field(&psi, &FieldConfig::free(), &policy, &op).unwrap();
        for v in &sample.v {
            assert_relative_eq!(v[0], k / 1.7, epsilon = 1e-10);
        }
    }

    #[test]
    fn constant_vector_potential_adds_the_gauge_drift() {
        let grid = line(64, 20.0);
        let params = PauliParams {
            mass: 1.3,
            charge: 0.7,
            light_speed: 2.0,
            ..PauliParams::natural()
        };
        let psi = packet_spinor(&grid, params, [C::new(1.0, 0.0), C::new(1.0, 0.0)]);
        let fields = FieldConfig {
            scalar: Potential::Free,
            vector: VectorPotential::Uniform([3.0, 1.0, 2.0]),
            magnetic: MagneticField::Zero,
        };
        let policy = NodePolicy::for_run(&grid, 1.0);
        let op = SpectralOp::new(&grid);
        let sample = position_velocity_field(&psi, &fields, &policy, &op).unwrap();
        let expect = -0.7 * 3.0 / (1.3 * 2.0);
        // Probe the bulk only: at near-node tail cells the 1/ρ̃ division
        // amplifies spectral roundoff in Im(ψ†∂ψ) arbitrarily.
        let rho = psi.total_density();
        let rho_max = rho.values.iter().cloned().fold(0.0, f64::max);
        for (f, v) in sample.v.iter().enumerate() {
            if rho.values[f] >= 1e-6 * rho_max {
                assert!((v[0] - expect).abs() <= 1e-9, "cell {f}: {} vs {expect}", v[0]);
            }
        }
    }

    #[test]
    fn factorised_spinor_recovers_the_scalar_guidance_field() {
        let grid = line(128, 30.0);
        let params = PauliParams::natural();
        let spec = GaussianSpec::one_d(0.5, 1.2, 0.8);
        let psi = SpinorField::from_packet(
            grid.clone(),
            params,
            spec,
            [C::new(0.6, 0.2), C::new(-0.3, 0.7)],
        )
        .unwrap();
        let scalar = crate::field::gaussian_packet(grid.clone(), 1.0, [1.0, 1.0], spec).unwrap();
        let policy = NodePolicy::for_run(&grid, 1.0);
        let op = SpectralOp::new(&grid);
        let spinor_v =
            position_velocity_field(&psi, &FieldConfig::free(), &policy, &op).unwrap();
        let scalar_v = crate::bohm::velocity_field(&scalar, &policy);
        for f in 0..grid.len() {
            if !spinor_v.mask[f] && !scalar_v.mask[f] {
                let diff = (spinor_v.v[f][0] - scalar_v.v[f][0]).abs();
                assert!(diff <= 1e-10, "cell {f}: diff {diff:.2e}");
            }
        }
    }

    #[test]
    fn spin_rate_vanishes_for_axial_and_zero_fields() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        let psi = packet_spinor(&grid, params, [C::new(0.8, 0.0), C::new(0.0, 0.6)]);
        let policy = NodePolicy::for_run(&grid, 1.0);
        for fields in [
            FieldConfig::uniform_b([0.0, 0.0, 3.0]),
            FieldConfig::free(),
            FieldConfig {
                scalar: Potential::Free,
                vector: VectorPotential::Zero,
                magnetic: MagneticField::LinearAlongZ { base: 0.5, gradient: 2.0 },
            },
        ] {
            let field = spin_velocity(&psi, &fields, &policy).unwrap();
            for v in &field.v {
                assert_eq!(v[0], 0.0);
                assert_eq!(v[1], 0.0);
            }
        }
    }

    #[test]
    fn spin_transport_identity_holds_for_transverse_fields() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        let b = 0.9;
        let fields = FieldConfig::uniform_b([b, 0.0, 0.0]);
        let policy = NodePolicy::for_run(&grid, 1.0);

        // Symmetric case: equal branches, zero net transfer rate.
        let psi = packet_spinor(&grid, params, [C::new(1.0, 0.0), C::new(1.0, 0.0)]);
        let field = spin_velocity(&psi, &fields, &policy).unwrap();
        let lhs: f64 = ksum(
            field.v.iter().zip(&psi.values).map(|(v, w)| {
                v[0] * w[0].norm_sqr() + v[1] * w[1].norm_sqr()
            }),
        ) * grid.cell_volume();
        let rhs = spin_expectation_rate(&psi, &fields).unwrap();
        assert!((lhs - rhs).abs() <= 1e-10, "lhs {lhs:e} vs rhs {rhs:e}");

        // An asymmetric spinor some way into its precession: the rate is
        // nonzero and must match −μB(|c₊|²−|c₋|²)sin(2μBt/ħ).
        let psi0 = packet_spinor(
            &grid,
            params,
            [C::new(0.7f64.sqrt(), 0.0), C::new(0.3f64.sqrt(), 0.0)],
        );
        let record = evolve_pauli(&psi0, &fields, 0.5, 1e-3, 500).unwrap();
        let psi_t = record.final_state();
        let field = spin_velocity(psi_t, &fields, &policy).unwrap();
        let lhs: f64 = ksum(
            field.v.iter().zip(&psi_t.values).map(|(v, w)| {
                v[0] * w[0].norm_sqr() + v[1] * w[1].norm_sqr()
            }),
        ) * grid.cell_volume();
        let rhs = spin_expectation_rate(psi_t, &fields).unwrap();
        let oracle = -b * 0.4 * (2.0 * b * 0.5).sin();
        assert!((lhs - rhs).abs() <= 1e-10, "lhs {lhs:e} vs rhs {rhs:e}");
        assert!((lhs - oracle).abs() <= 1e-8, "rate {lhs} vs oracle {oracle}");
    }

    #[test]
    fn spin_vector_points_along_the_prepared_direction() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        let up = packet_spinor(&grid, params, [C::new(1.0, 0.0), C::new(0.0, 0.0)]);
        let field = spin_vector_field(&up);
        for (f, ok) in field.mask.iter().enumerate() {
            if *ok {
                assert_relative_eq!(field.values[f][0], 0.0, epsilon = 1e-12);
                assert_relative_eq!(field.values[f][1], 0.0, epsilon = 1e-12);
                assert_relative_eq!(field.values[f][2], 0.5, epsilon = 1e-12);
            }
        }
        let x = packet_spinor(&grid, params, [C::new(1.0, 0.0), C::new(1.0, 0.0)]);
        let field = spin_vector_field(&x);
        for (f, ok) in field.mask.iter().enumerate() {
            if *ok {
                assert_relative_eq!(field.values[f][0], 0.5, epsilon = 1e-12);
                assert_relative_eq!(field.values[f][1], 0.0, epsilon = 1e-12);
                assert_relative_eq!(field.values[f][2], 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn spin_vector_length_never_exceeds_half_hbar() {
        let grid = line(32, 10.0);
        let params = PauliParams::natural();
        let mut rng = ChaCha12Rng::seed_from_u64(2024);
        for _ in 0..20 {
            let values: Vec<[C<f64>; 2]> = (0..grid.len())
                .map(|_| {
                    [
                        C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                        C::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5),
                    ]
                })
                .collect();
            let psi = SpinorField::new(grid.clone(), values, params, 0.0).unwrap();
            let field = spin_vector_field(&psi);
            for (f, ok) in field.mask.iter().enumerate() {
                if *ok {
                    let s = field.values[f];
                    let len = (s[0] * s[0] + s[1] * s[1] + s[2] * s[2]).sqrt();
                    assert!(len <= 0.5 + 1e-9, "cell {f}: |s| = {len}");
                }
            }
        }
    }

    #[test]
    fn axial_field_keeps_every_beable_bitwise_constant() {
        let grid = line(256, 40.0);
        let params = PauliParams::natural();
        let config = SternGerlachConfig {
            grid,
            params,
            packet: GaussianSpec::one_d(0.0, 1.0, 0.0),
            coeffs: [C::new(0.5f64.sqrt(), 0.0), C::new(0.5f64.sqrt(), 0.0)],
            gradient: 1.0,
            duration: 0.5,
            dt: 2.5e-3,
            stride: 20,
            trajectories: 100,
            substeps: 2,
            seed: 5,
        };
        let report = stern_gerlach_run(&config).unwrap();
        assert!(report.s3_constant);
        for t in &report.ensemble.trajectories {
            assert_eq!(t.s3[0], t.lambda0);
            for &s in &t.s3 {
                assert_eq!(s, t.lambda0);
            }
        }
    }

    #[test]
    fn zero_field_beable_rides_the_scalar_trajectory() {
        let grid = line(128, 30.0);
        let params = PauliParams::natural();
        let spec = GaussianSpec::one_d(0.0, 1.0, 1.5);
        let psi0 =
            SpinorField::from_packet(grid.clone(), params, spec, [C::new(1.0, 0.0), zero_c()])
                .unwrap();
        let record = evolve_pauli(&psi0, &FieldConfig::free(), 1.0, 1e-3, 50).unwrap();
        let policy = NodePolicy::for_run(&grid, 1.0);
        let flows = beable_flows(&record, &FieldConfig::free(), &policy).unwrap();
        let traj = integrate_spin_beable(&flows, 0.7, 0.5, 2);
        assert!(traj.s3.iter().all(|&s| s == 0.5));

        let scalar0 = crate::field::gaussian_packet(grid, 1.0, [1.0, 1.0], spec).unwrap();
        let scalar_rec = evolve(&scalar0, &Potential::Free, 1.0, 1e-3, 50).unwrap();
        let flow = GuidanceFlow::from_record(&scalar_rec, &policy);
        let scalar_traj = crate::bohm::integrate_with_flow(&flow, [0.7, 0.0], 2);
        let diff = (traj.base.final_point()[0] - scalar_traj.final_point()[0]).abs();
        assert!(diff <= 1e-9, "spinor vs scalar trajectory diff {diff:.2e}");
    }

    #[test]
    fn precessing_ensemble_mean_tracks_the_two_level_oracle() {
        let grid = line(64, 20.0);
        let params = PauliParams::natural();
        // Stationary spatial profile (harmonic ground state) so only the
        // spin sector moves.
        let psi0 = SpinorField::from_packet(
            grid.clone(),
            params,
            GaussianSpec::one_d(0.0, 0.5f64.sqrt(), 0.0),
            [C::new(0.7f64.sqrt(), 0.0), C::new(0.3f64.sqrt(), 0.0)],
        )
        .unwrap();
        let b = 0.25;
        let fields = FieldConfig {
            scalar: Potential::harmonic_1d(1.0),
            vector: VectorPotential::Zero,
            magnetic: MagneticField::Uniform([b, 0.0, 0.0]),
        };
        let record = evolve_pauli(&psi0, &fields, 1.0, 5e-3, 10).unwrap();
        let policy = NodePolicy::for_run(&grid, 1.0);
        let ensemble = run_spin_ensemble(&record, &fields, &policy, 2000, 31, 2).unwrap();
        let finals: Vec<f64> = ensemble
            .trajectories
            .iter()
            .map(|t| *t.s3.last().unwrap())
            .collect();
        let (mean, se) = mean_and_se(&finals);
        let oracle = 0.5 * 0.4 * (2.0 * b * 1.0).cos();
        assert!(
            (mean - oracle).abs() <= 3.0 * se + 1e-3,
            "mean {mean} vs oracle {oracle} (3se = {:.2e})",
            3.0 * se
        );
    }

    #[test]
    fn stern_gerlach_reproduces_born_fractions_and_separates_beams() {
        let grid = line(1024, 40.0);
        let params = PauliParams::natural();
        let config = SternGerlachConfig {
            grid,
            params,
            packet: GaussianSpec::one_d(0.0, 1.0, 0.0),
            coeffs: [C::new(0.3f64.sqrt(), 0.0), C::new(0.7f64.sqrt(), 0.0)],
            gradient: 2.5,
            duration: 2.0,
            dt: 1e-3,
            stride: 25,
            trajectories: 2000,
            substeps: 2,
            seed: 12,
        };
        let report = stern_gerlach_run(&config).unwrap();
        assert!(!report.record.boundary_warning);
        assert!(report.s3_constant);
        let margin = 3.0 * (0.3f64 * 0.7 / 2000.0).sqrt();
        assert!(
            (report.up_fraction - 0.3).abs() <= margin,
            "up fraction {} vs 0.3 ± {margin:.3}",
            report.up_fraction
        );
        // Separation grows monotonically: +branch pushed to −x.
        for w in report.separations.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "separation not monotone: {w:?}");
        }
        assert!(*report.separations.last().unwrap() > 5.0);
        assert!(
            report.population_overlap <= 0.01,
            "population overlap {}",
            report.population_overlap
        );
    }

    #[test]
    fn position_and_spin_rates_match_the_snapshot_derivatives() {
        // d⟨x⟩/dt vs Σ_λ∫v ρ̃ with a gauge drift, and d⟨S₃⟩/dt vs
        // (iħ)⁻¹⟨[S₃,H]⟩, both from centred snapshot differences.
        let grid = line(128, 30.0);
        let params = PauliParams {
            charge: 0.7,
            light_speed: 2.0,
            ..PauliParams::natural()
        };
        let psi0 = SpinorField::from_packet(
            grid.clone(),
            params,
            GaussianSpec::one_d(0.0, 1.0, 0.5),
            [C::new(0.7f64.sqrt(), 0.0), C::new(0.0, 0.3f64.sqrt())],
        )
        .unwrap();
        let fields = FieldConfig {
            scalar: Potential::Free,
            vector: VectorPotential::Uniform([1.5, 0.0, 0.0]),
            magnetic: MagneticField::Uniform([0.4, 0.0, 0.0]),
        };
        let record = evolve_pauli(&psi0, &fields, 0.02, 5e-3, 1).unwrap();
        let dt_snap = 5e-3;
        let mid = &record.snapshots[2];

        let x_of = |s: &SpinorField<f64>| {
            let rho = s.total_density();
            ksum((0..s.grid().len()).map(|f| s.grid().point(f)[0] * rho.values[f]))
                * s.grid().cell_volume()
        };
        let dxdt =
            (x_of(&record.snapshots[3]) - x_of(&record.snapshots[1])) / (2.0 * dt_snap);
        let policy = NodePolicy::for_run(&grid, 1.0);
        let op = SpectralOp::new(&grid);
        let sample = position_velocity_field(mid, &fields, &policy, &op).unwrap();
        let rho = mid.total_density();
        let flux: f64 = ksum(
            (0..grid.len())
                .filter(|&f| !sample.mask[f])
                .map(|f| sample.v[f][0] * rho.values[f]),
        ) * grid.cell_volume();
        assert!((dxdt - flux).abs() <= 1e-6, "d⟨x⟩/dt {dxdt} vs flux {flux}");

        let s3_of = |s: &SpinorField<f64>| s.spin_expectation()[2];
        let ds3 =
            (s3_of(&record.snapshots[3]) - s3_of(&record.snapshots[1])) / (2.0 * dt_snap);
        let rate = spin_expectation_rate(mid, &fields).unwrap();
        assert!((ds3 - rate).abs() <= 1e-6, "d⟨S₃⟩/dt {ds3} vs rate {rate}");
    }
}
