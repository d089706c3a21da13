//! Impulsive pointer measurement as an executable derivation.
//!
//! A system packet superposition couples impulsively to a pointer through
//! `H = g·λ(x)·p_y` (free parts off), translating each branch's pointer by
//! `gλ_jT`. Bohmian trajectories on the joint grid then pick outcomes:
//! the fraction landing in each product support reproduces the Born weights,
//! and the reduced density matrix loses its off-diagonals exactly as fast as
//! the pointer packets separate. The projection rule is the *checked
//! consequence* of these runs, not an input.

use crate::bohm::{integrate_with_flow, GuidanceFlow, NodePolicy, Trajectory, VelocityFieldSample};
use crate::error::{Error, Result};
use crate::field::{GaussianSpec, WaveFunction};
use crate::grid::{Direction, Grid, SpectralOp};
use crate::sample::sample_density;
use crate::scalar::{C, Real};
use crate::schrodinger::{evolve, Potential};
use crate::stats::KahanSum;
use rayon::prelude::*;

/// Maximum tolerated |⟨packet_i, packet_j⟩| between outcome packets. Also
/// the design constant in every decoherence bound: the bounds keep using it
/// even when a run deliberately relaxes the validation limit.
pub const PACKET_OVERLAP_LIMIT: f64 = 1e-6;

/// Tolerance on `Σ|c_j|² − 1`.
pub const COEFFICIENT_TOL: f64 = 1e-10;

/// A packet's support holds all but this much of its mass.
pub const SUPPORT_TAIL: f64 = 1e-8;

/// Pointer-measurement description. The joint grid is 2D: axis 0 carries the
/// system (`x`), axis 1 the pointer (`y`).
#[derive(Debug, Clone)]
pub struct MeasurementConfig<R: Real> {
    pub grid: Grid<R>,
    pub hbar: R,
    /// `[m_system, m_pointer]` — heavy masses keep the packets rigid over
    /// the post-measurement drift window.
    pub mass: [R; 2],
    pub coefficients: Vec<C<R>>,
    /// System eigenpackets ψ_j along `x` (1D specs, axis-0 fields used).
    pub system_packets: Vec<GaussianSpec<R>>,
    /// Pointer ready packet φ₀ along `y`.
    pub pointer_ready: GaussianSpec<R>,
    /// Outcome eigenvalues λ_j; branch j's pointer translates by `gλ_jT`.
    pub eigenvalues: Vec<R>,
    pub coupling: R,
    pub duration: R,
    /// Validation limit on packet overlaps. Defaults to
    /// [`PACKET_OVERLAP_LIMIT`]; negative-control runs may raise it, the
    /// decoherence bounds do not follow.
    pub overlap_limit: R,
}

impl<R: Real> MeasurementConfig<R> {
    /// Number of outcomes J.
    pub fn outcomes(&self) -> usize {
        self.coefficients.len()
    }

    /// Pointer displacement of branch `j` at the end of the coupling.
    pub fn displacement(&self, j: usize) -> R {
        self.coupling * self.eigenvalues[j] * self.duration
    }

    /// Displaced pointer packet φ_j.
    pub fn pointer_packet(&self, j: usize) -> GaussianSpec<R> {
        let mut spec = self.pointer_ready;
        spec.center[0] = spec.center[0] + self.displacement(j);
        spec
    }

    /// Full validation: coefficient norm, packet overlaps on both axes,
    /// and pointer packets staying inside the box.
    pub fn validate(&self) -> Result<()> {
        let j = self.outcomes();
        if j == 0 || j > 3 {
            return Err(Error::Config(format!(
                "outcome count must be 1..=3 at desk scale, got {j}"
            )));
        }
        if self.grid.dims() != 2 {
            return Err(Error::DimsMismatch { expected: 2, got: self.grid.dims() });
        }
        if self.system_packets.len() != j || self.eigenvalues.len() != j {
            return Err(Error::LengthMismatch { grid: j, field: self.system_packets.len() });
        }
        let sum: R = self
            .coefficients
            .iter()
            .map(|c| c.norm_sqr())
            .fold(R::zero(), |a, b| a + b);
        if (sum - R::one()).abs() > R::lit(COEFFICIENT_TOL) {
            return Err(Error::BadCoefficients {
                sum: sum.as_f64(),
                tolerance: COEFFICIENT_TOL,
            });
        }
        for a in 0..j {
            for b in (a + 1)..j {
                let overlap = axis_overlap(&self.grid, 0, self.hbar, &self.system_packets[a],
                    &self.system_packets[b]);
                if overlap > self.overlap_limit {
                    return Err(Error::PacketOverlap {
                        first: a,
                        second: b,
                        overlap: overlap.as_f64(),
                        limit: self.overlap_limit.as_f64(),
                    });
                }
                let overlap = axis_overlap(&self.grid, 1, self.hbar, &self.pointer_packet(a),
                    &self.pointer_packet(b));
                if overlap > self.overlap_limit {
                    return Err(Error::PacketOverlap {
                        first: a,
                        second: b,
                        overlap: overlap.as_f64(),
                        limit: self.overlap_limit.as_f64(),
                    });
                }
            }
        }
        let half_y = self.grid.extent(1) / R::lit(2.0);
        for idx in 0..j {
            let (lo, hi) = axis_support(&self.grid, 1, self.hbar, &self.pointer_packet(idx));
            if lo <= -half_y || hi >= half_y {
                return Err(Error::Config(format!(
                    "pointer packet {idx} lands on [{:.3}, {:.3}], outside the box of half-extent {:.3}; enlarge the pointer axis",
                    lo.as_f64(),
                    hi.as_f64(),
                    half_y.as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Packet sampled along one axis, normalised so `Σ|v|²·Δ = 1`.
fn axis_profile<R: Real>(
    grid: &Grid<R>,
    axis: usize,
    hbar: R,
    spec: &GaussianSpec<R>,
) -> Vec<C<R>> {
    let mut values: Vec<C<R>> = (0..grid.points(axis))
        .map(|idx| spec.amplitude(1, hbar, [grid.coord(axis, idx), R::zero()]))
        .collect();
    let mass = crate::stats::ksum(values.iter().map(|v| v.norm_sqr())) * grid.spacing(axis);
    let scale = R::one() / mass.sqrt();
    for v in &mut values {
        *v = *v * scale;
    }
    values
}

/// |⟨a, b⟩| of two normalised packets along one axis, by grid quadrature.
fn axis_overlap<R: Real>(
    grid: &Grid<R>,
    axis: usize,
    hbar: R,
    a: &GaussianSpec<R>,
    b: &GaussianSpec<R>,
) -> R {
    let va = axis_profile(grid, axis, hbar, a);
    let vb = axis_profile(grid, axis, hbar, b);
    let mut re = KahanSum::new();
    let mut im = KahanSum::new();
    for (x, y) in va.iter().zip(&vb) {
        let prod = x.conj() * *y;
        re.add(prod.re);
        im.add(prod.im);
    }
    let dv = grid.spacing(axis);
    C::new(re.value() * dv, im.value() * dv).norm()
}

/// Minimal interval holding `1 − SUPPORT_TAIL` of a packet's mass along one
/// axis, found by a two-pointer sweep over the (cell-centred) density.
/// Interval ends sit on cell edges.
fn axis_support<R: Real>(
    grid: &Grid<R>,
    axis: usize,
    hbar: R,
    spec: &GaussianSpec<R>,
) -> (R, R) {
    let n = grid.points(axis);
    let delta = grid.spacing(axis);
    let rho: Vec<R> = (0..n)
        .map(|idx| {
            spec.amplitude(1, hbar, [grid.coord(axis, idx), R::zero()]).norm_sqr() * delta
        })
        .collect();
    let total: R = crate::stats::ksum(rho.iter().copied());
    let target = total * (R::one() - R::lit(SUPPORT_TAIL));
    let mut best: Option<(usize, usize)> = None;
    let mut lo = 0;
    let mut acc = R::zero();
    for hi in 0..n {
        acc = acc + rho[hi];
        while acc - rho[lo] >= target {
            acc = acc - rho[lo];
            lo += 1;
        }
        if acc >= target {
            let better = match best {
                None => true,
                Some((blo, bhi)) => hi - lo < bhi - blo,
            };
            if better {
                best = Some((lo, hi));
            }
        }
    }
    let (lo, hi) = best.unwrap_or((0, n - 1));
    let half = delta / R::lit(2.0);
    (grid.coord(axis, lo) - half, grid.coord(axis, hi) + half)
}

/// The classification boxes of a run: per outcome, the system interval, the
/// final pointer interval, and the pointer interval back-mapped to t = 0.
#[derive(Debug, Clone)]
pub struct MeasurementSupports<R: Real> {
    pub system: Vec<(R, R)>,
    pub pointer_final: Vec<(R, R)>,
    pub pointer_initial: Vec<(R, R)>,
    /// False when outcome boxes overlap (possible only with a relaxed
    /// overlap limit); classification then takes the lowest matching index.
    pub disjoint: bool,
}

impl<R: Real> MeasurementSupports<R> {
    pub fn build(config: &MeasurementConfig<R>) -> Self {
        let j = config.outcomes();
        let mut system = Vec::with_capacity(j);
        let mut pointer_final = Vec::with_capacity(j);
        let mut pointer_initial = Vec::with_capacity(j);
        for idx in 0..j {
            system.push(axis_support(&config.grid, 0, config.hbar, &config.system_packets[idx]));
            let (lo, hi) = axis_support(&config.grid, 1, config.hbar, &config.pointer_packet(idx));
            pointer_final.push((lo, hi));
            let shift = config.displacement(idx);
            pointer_initial.push((lo - shift, hi - shift));
        }
        let disjoint_on = |iv: &[(R, R)]| {
            let mut sorted: Vec<_> = iv.to_vec();
            sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite support"));
            sorted.windows(2).all(|w| w[0].1 < w[1].0)
        };
        let disjoint = disjoint_on(&system) && disjoint_on(&pointer_final);
        Self { system, pointer_final, pointer_initial, disjoint }
    }

    /// Outcome of a final-time point, if any (lowest index wins on overlap).
    pub fn classify_final(&self, p: [R; 2]) -> Option<usize> {
        (0..self.system.len()).find(|&j| {
            let (xl, xh) = self.system[j];
            let (yl, yh) = self.pointer_final[j];
            p[0] >= xl && p[0] <= xh && p[1] >= yl && p[1] <= yh
        })
    }

    /// Outcome of an initial point under the back-mapped domains.
    pub fn classify_initial(&self, p: [R; 2]) -> Option<usize> {
        (0..self.system.len()).find(|&j| {
            let (xl, xh) = self.system[j];
            let (yl, yh) = self.pointer_initial[j];
            p[0] >= xl && p[0] <= xh && p[1] >= yl && p[1] <= yh
        })
    }
}

/// `Ψ_in(x,y) = Σ_j c_j ψ_j(x) φ₀(y)`, normalised.
pub fn build_joint_initial<R: Real>(config: &MeasurementConfig<R>) -> Result<WaveFunction<R>> {
    config.validate()?;
    let grid = config.grid.clone();
    let (nx, ny) = (grid.points(0), grid.points(1));
    // Tabulate the axis factors once; the joint field is their outer product.
    let hbar = config.hbar;
    let system: Vec<Vec<C<R>>> = config
        .system_packets
        .iter()
        .map(|spec| axis_profile(&grid, 0, hbar, spec))
        .collect();
    let pointer = axis_profile(&grid, 1, hbar, &config.pointer_ready);
    let mut values = vec![C::new(R::zero(), R::zero()); grid.len()];
    for ix in 0..nx {
        for iy in 0..ny {
            let mut v = C::new(R::zero(), R::zero());
            for (j, c) in config.coefficients.iter().enumerate() {
                v = v + *c * system[j][ix];
            }
            values[grid.index(ix, iy)] = v * pointer[iy];
        }
    }
    WaveFunction::new(grid, values, hbar, config.mass, R::zero())
}

/// The eigenvalue multiplier λ(x): each x-cell takes the eigenvalue of the
/// nearest system-packet centre.
pub fn eigenvalue_map<R: Real>(config: &MeasurementConfig<R>) -> Vec<R> {
    let nx = config.grid.points(0);
    (0..nx)
        .map(|ix| {
            let x = config.grid.coord(0, ix);
            let nearest = config
                .system_packets
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| {
                    let da = (x - a.center[0]).abs();
                    let db = (x - b.center[0]).abs();
                    da.partial_cmp(&db).expect("finite centres")
                })
                .map(|(j, _)| j)
                .expect("at least one outcome");
            config.eigenvalues[nearest]
        })
        .collect()
}

/// Stored coupling evolution (impulsive: `H = gλ(x)p_y`, free parts off).
#[derive(Debug, Clone)]
pub struct MeasurementRecord<R: Real> {
    pub snapshots: Vec<WaveFunction<R>>,
    pub dt: R,
}

impl<R: Real> MeasurementRecord<R> {
    pub fn final_state(&self) -> &WaveFunction<R> {
        self.snapshots.last().expect("at least the initial snapshot")
    }

    pub fn times(&self) -> Vec<R> {
        self.snapshots.iter().map(|s| s.time).collect()
    }
}

/// Evolve the coupling for the configured duration, storing `snapshots`
/// intermediate states (plus the initial one). Each stored step applies the
/// exact propagator `exp(−i g λ(x) k_y Δt)` in the pointer's wavenumber
/// space, so the count only controls trajectory-lattice resolution, not
/// accuracy.
pub fn evolve_measurement<R: Real>(
    psi0: &WaveFunction<R>,
    config: &MeasurementConfig<R>,
    snapshots: usize,
) -> Result<MeasurementRecord<R>> {
    if snapshots == 0 {
        return Err(Error::Config("need at least one coupling step".into()));
    }
    let grid = psi0.grid().clone();
    let lambda = eigenvalue_map(config);
    let op = SpectralOp::new(&grid);
    let dt = config.duration / R::from_usize(snapshots).unwrap();
    let (nx, ny) = (grid.points(0), grid.points(1));
    let ky = op.wavenumbers(1).to_vec();
    let mut stored = Vec::with_capacity(snapshots + 1);
    stored.push(psi0.clone());
    let mut psi = psi0.clone();
    for _ in 0..snapshots {
        let mut values = psi.values.clone();
        op.transform_axis(&mut values, 1, Direction::Forward);
        for ix in 0..nx {
            let g_lambda = config.coupling * lambda[ix];
            for (iy, k) in ky.iter().enumerate().take(ny) {
                let phase = C::from_polar(R::one(), -g_lambda * *k * dt);
                let f = ix * ny + iy;
                values[f] = values[f] * phase;
            }
        }
        op.transform_axis(&mut values, 1, Direction::Inverse);
        psi.values = values;
        psi.time = psi.time + dt;
        stored.push(psi.clone());
    }
    Ok(MeasurementRecord { snapshots: stored, dt })
}

/// Target of an ideal coupling: `Σ_j c_j ψ_j(x) φ_j(y)`.
pub fn ideal_final_state<R: Real>(config: &MeasurementConfig<R>) -> Result<WaveFunction<R>> {
    let grid = config.grid.clone();
    let (nx, ny) = (grid.points(0), grid.points(1));
    let hbar = config.hbar;
    let mut values = vec![C::new(R::zero(), R::zero()); grid.len()];
    for (j, c) in config.coefficients.iter().enumerate() {
        let col_x = axis_profile(&grid, 0, hbar, &config.system_packets[j]);
        let col_y = axis_profile(&grid, 1, hbar, &config.pointer_packet(j));
        for ix in 0..nx {
            for iy in 0..ny {
                values[grid.index(ix, iy)] = values[grid.index(ix, iy)] + *c * col_x[ix] * col_y[iy];
            }
        }
    }
    WaveFunction::new(grid, values, hbar, config.mass, config.duration)
}

/// `|⟨a, b⟩|²` of two normalised states.
pub fn fidelity<R: Real>(a: &WaveFunction<R>, b: &WaveFunction<R>) -> R {
    a.inner(b).norm_sqr()
}

/// Guidance flow of the impulsive coupling: `v = (0, gλ(x))` exactly — the
/// Hamiltonian has no kinetic term while the coupling is on, so the current
/// is pure pointer drift and nodes need no regularisation.
pub fn coupling_flow<R: Real>(
    record: &MeasurementRecord<R>,
    config: &MeasurementConfig<R>,
) -> Result<GuidanceFlow<R>> {
    let grid = record.snapshots[0].grid().clone();
    let lambda = eigenvalue_map(config);
    let ny = grid.points(1);
    let v: Vec<[R; 2]> = (0..grid.len())
        .map(|f| [R::zero(), config.coupling * lambda[f / ny]])
        .collect();
    let mask = vec![false; grid.len()];
    let times = record.times();
    let fields = times
        .iter()
        .map(|&t| VelocityFieldSample { grid: grid.clone(), time: t, v: v.clone(), mask: mask.clone() })
        .collect();
    GuidanceFlow::from_fields(grid, times, fields)
}

/// Per-run outcome statistics.
#[derive(Debug)]
pub struct OutcomeRecord<R: Real> {
    pub seed: u64,
    pub n: usize,
    pub counts: Vec<usize>,
    pub unclassified: usize,
    /// Outcome per trajectory, aligned with `trajectories`.
    pub outcomes: Vec<Option<usize>>,
    pub trajectories: Vec<Trajectory<R>>,
    pub supports: MeasurementSupports<R>,
}

impl<R: Real> OutcomeRecord<R> {
    /// `w_j = n_j / n`.
    pub fn weights(&self) -> Vec<R> {
        let n = R::from_usize(self.n).unwrap();
        self.counts
            .iter()
            .map(|&c| R::from_usize(c).unwrap() / n)
            .collect()
    }

    /// Binomial standard error of each weight.
    pub fn standard_errors(&self) -> Vec<R> {
        let n = R::from_usize(self.n).unwrap();
        self.weights()
            .iter()
            .map(|&w| (w * (R::one() - w) / n).sqrt())
            .collect()
    }

    /// `Σ_j w_j |ψ_jφ_j⟩⟨ψ_jφ_j|` in the outcome basis: diagonal weights.
    pub fn reconstructed_density(&self) -> DensityMatrix<R> {
        let j = self.counts.len();
        let mut entries = vec![C::new(R::zero(), R::zero()); j * j];
        for (idx, w) in self.weights().iter().enumerate() {
            entries[idx * j + idx] = C::new(*w, R::zero());
        }
        DensityMatrix { dim: j, entries }
    }
}

/// Sample `n` starts from `|Ψ_in|²`, ride the coupling flow, classify the
/// endpoints by the product supports.
pub fn run_measurement_ensemble<R: Real>(
    config: &MeasurementConfig<R>,
    n: usize,
    seed: u64,
    snapshots: usize,
) -> Result<(OutcomeRecord<R>, MeasurementRecord<R>)> {
    let psi0 = build_joint_initial(config)?;
    let record = evolve_measurement(&psi0, config, snapshots)?;
    let supports = MeasurementSupports::build(config);
    if !supports.disjoint && config.overlap_limit <= R::lit(PACKET_OVERLAP_LIMIT) {
        return Err(Error::Config(
            "outcome supports overlap; widen the packet spacing".into(),
        ));
    }
    if !supports.disjoint {
        log::warn!("outcome supports overlap; classification takes the lowest matching index");
    }
    let flow = coupling_flow(&record, config)?;
    let starts = sample_density(&psi0.density(), n, seed)?;
    let trajectories: Vec<Trajectory<R>> = starts
        .par_iter()
        .map(|&x0| integrate_with_flow(&flow, x0, 1))
        .collect();
    let j = config.outcomes();
    let mut counts = vec![0usize; j];
    let mut unclassified = 0usize;
    let outcomes: Vec<Option<usize>> = trajectories
        .iter()
        .map(|t| {
            let out = supports.classify_final(t.final_point());
            match out {
                Some(idx) => counts[idx] += 1,
                None => unclassified += 1,
            }
            out
        })
        .collect();
    Ok((
        OutcomeRecord { seed, n, counts, unclassified, outcomes, trajectories, supports },
        record,
    ))
}

/// Initial-domain weight by quadrature: mass of `|Ψ_in|²` over the
/// back-mapped box `supp ψ_j × (supp φ_j − gλ_jT)`.
pub fn back_mapped_weight<R: Real>(
    psi0: &WaveFunction<R>,
    supports: &MeasurementSupports<R>,
    j: usize,
) -> R {
    let grid = psi0.grid();
    let (xl, xh) = supports.system[j];
    let (yl, yh) = supports.pointer_initial[j];
    let mut acc = KahanSum::new();
    for f in 0..grid.len() {
        let p = grid.point(f);
        if p[0] >= xl && p[0] <= xh && p[1] >= yl && p[1] <= yh {
            acc.add(psi0.values[f].norm_sqr());
        }
    }
    acc.value() * grid.cell_volume()
}

/// J×J complex matrix in the outcome basis, row-major.
#[derive(Debug, Clone)]
pub struct DensityMatrix<R: Real> {
    pub dim: usize,
    pub entries: Vec<C<R>>,
}

impl<R: Real> DensityMatrix<R> {
    pub fn entry(&self, j: usize, k: usize) -> C<R> {
        self.entries[j * self.dim + k]
    }

    /// Max |M_{jk} − conj(M_{kj})|.
    pub fn hermiticity_error(&self) -> R {
        let mut worst = R::zero();
        for j in 0..self.dim {
            for k in 0..self.dim {
                worst = worst.max((self.entry(j, k) - self.entry(k, j).conj()).norm());
            }
        }
        worst
    }

    pub fn trace(&self) -> C<R> {
        let mut acc = C::new(R::zero(), R::zero());
        for j in 0..self.dim {
            acc = acc + self.entry(j, j);
        }
        acc
    }

    /// Positive semidefiniteness via principal minors (dim ≤ 3): every
    /// principal minor of a Hermitian PSD matrix is ≥ 0; `tol` absorbs
    /// roundoff.
    pub fn is_positive_semidefinite(&self, tol: R) -> bool {
        let subsets: Vec<Vec<usize>> = (1..(1u32 << self.dim))
            .map(|bits| (0..self.dim).filter(|&j| bits & (1 << j) != 0).collect())
            .collect();
        subsets.iter().all(|s| self.minor(s).re >= -tol)
    }

    fn minor(&self, idx: &[usize]) -> C<R> {
        match idx.len() {
            1 => self.entry(idx[0], idx[0]),
            2 => {
                let (a, b) = (idx[0], idx[1]);
                self.entry(a, a) * self.entry(b, b) - self.entry(a, b) * self.entry(b, a)
            }
            3 => {
                let (a, b, c) = (idx[0], idx[1], idx[2]);
                let det = self.entry(a, a)
                    * (self.entry(b, b) * self.entry(c, c) - self.entry(b, c) * self.entry(c, b))
                    - self.entry(a, b)
                        * (self.entry(b, a) * self.entry(c, c)
                            - self.entry(b, c) * self.entry(c, a))
                    + self.entry(a, c)
                        * (self.entry(b, a) * self.entry(c, b)
                            - self.entry(b, b) * self.entry(c, a));
                det
            }
            _ => unreachable!("desk scale caps outcomes at 3"),
        }
    }
}

/// Reduced density matrix in the system-packet basis: partial trace over the
/// pointer, `M_{jk} = ∫ a_j(y) a_k*(y) dy` with `a_j(y) = ∫ ψ_j*(x) Ψ(x,y) dx`.
/// Before the coupling the off-diagonals carry the full coherences
/// `c_j c_k*`; after it they shrink to the pointer overlap.
pub fn reduced_density<R: Real>(
    psi: &WaveFunction<R>,
    config: &MeasurementConfig<R>,
) -> DensityMatrix<R> {
    let grid = psi.grid();
    let ny = grid.points(1);
    let hbar = config.hbar;
    let j = config.outcomes();
    let dx = grid.spacing(0);
    let dy = grid.spacing(1);
    // a_j(y) for every outcome.
    let mut a = vec![vec![C::new(R::zero(), R::zero()); ny]; j];
    for (idx, spec) in config.system_packets.iter().enumerate() {
        let col = axis_profile(grid, 0, hbar, spec);
        for iy in 0..ny {
            let mut re = KahanSum::new();
            let mut im = KahanSum::new();
            for (ix, c) in col.iter().enumerate() {
                let prod = c.conj() * psi.values[grid.index(ix, iy)];
                re.add(prod.re);
                im.add(prod.im);
            }
            a[idx][iy] = C::new(re.value() * dx, im.value() * dx);
        }
    }
    let mut entries = vec![C::new(R::zero(), R::zero()); j * j];
    for row in 0..j {
        for colm in 0..j {
            let mut re = KahanSum::new();
            let mut im = KahanSum::new();
            for iy in 0..ny {
                let prod = a[row][iy] * a[colm][iy].conj();
                re.add(prod.re);
                im.add(prod.im);
            }
            entries[row * j + colm] = C::new(re.value() * dy, im.value() * dy);
        }
    }
    DensityMatrix { dim: j, entries }
}

/// One checked statement of the projection-rule report.
#[derive(Debug, Clone)]
pub struct AssertionResult<R: Real> {
    pub name: String,
    pub passed: bool,
    pub measured: R,
    pub bound: R,
}

impl<R: Real> AssertionResult<R> {
    fn check(name: String, measured: R, bound: R) -> Self {
        Self { name, passed: measured <= bound, measured, bound }
    }
}

/// Outcome of the projection-rule derivation on one run.
#[derive(Debug)]
pub struct ProjectionReport<R: Real> {
    /// (a) each w_j vs the reduced-density diagonal, 3 SE bound.
    pub weight_match: Vec<AssertionResult<R>>,
    /// (b) fraction of trajectories whose final-time classification differs
    /// from the back-mapped initial-domain classification.
    pub domain_agreement: AssertionResult<R>,
    /// (c) entrywise |Σ_j w_j P_j − ρ_red|.
    pub density_match: Vec<AssertionResult<R>>,
    pub passed: bool,
}

/// Run the three projection-rule assertions.
pub fn projection_rule_check<R: Real>(
    record: &OutcomeRecord<R>,
    psi_t: &WaveFunction<R>,
    config: &MeasurementConfig<R>,
) -> ProjectionReport<R> {
    let rho = reduced_density(psi_t, config);
    let weights = record.weights();
    let ses = record.standard_errors();
    let three = R::lit(3.0);
    let floor = R::lit(1e-9);
    let weight_match: Vec<AssertionResult<R>> = (0..config.outcomes())
        .map(|j| {
            AssertionResult::check(
                format!("w[{j}] vs diag"),
                (weights[j] - rho.entry(j, j).re).abs(),
                three * ses[j] + floor,
            )
        })
        .collect();

    let disagreements = record
        .trajectories
        .iter()
        .zip(&record.outcomes)
        .filter(|(t, out)| record.supports.classify_initial(t.x0) != **out)
        .count();
    let domain_agreement = AssertionResult::check(
        "initial vs final domain classification".into(),
        R::from_usize(disagreements).unwrap() / R::from_usize(record.n).unwrap(),
        R::lit(0.01),
    );

    let assembled = record.reconstructed_density();
    let eps = R::lit(PACKET_OVERLAP_LIMIT);
    let mut density_match = Vec::new();
    for j in 0..config.outcomes() {
        for k in 0..config.outcomes() {
            let diff = (assembled.entry(j, k) - rho.entry(j, k)).norm();
            let bound = if j == k {
                (three * ses[j]).max(eps)
            } else {
                // Decoherence bound: |c_j||c_k|·ε_ov + ε_ov, using the
                // design overlap regardless of any relaxed validation limit.
                config.coefficients[j].norm() * config.coefficients[k].norm() * eps + eps
            };
            density_match.push(AssertionResult::check(
                format!("rho[{j}][{k}]"),
                diff,
                bound,
            ));
        }
    }
    let passed = weight_match.iter().all(|a| a.passed)
        && domain_agreement.passed
        && density_match.iter().all(|a| a.passed);
    ProjectionReport { weight_match, domain_agreement, density_match, passed }
}

/// Post-measurement stability: evolve the final state freely for
/// `drift_duration` (coupling off), continue every trajectory in the Bohmian
/// flow of that record, and report the fraction whose classification
/// changes. Macroscopically distinct branches must stay distinct.
pub fn indicator_drift_fraction<R: Real>(
    record: &OutcomeRecord<R>,
    psi_t: &WaveFunction<R>,
    drift_duration: R,
    dt: R,
    stride: usize,
) -> Result<R> {
    let drift = evolve(psi_t, &Potential::Free, drift_duration, dt, stride)?;
    let policy = NodePolicy::for_run(psi_t.grid(), drift_duration);
    let flow = GuidanceFlow::from_record(&drift, &policy);
    let supports = &record.supports;
    let changed: usize = record
        .trajectories
        .par_iter()
        .zip(&record.outcomes)
        .map(|(t, out)| {
            let continued = integrate_with_flow(&flow, t.final_point(), 2);
            usize::from(supports.classify_final(continued.final_point()) != *out)
        })
        .sum();
    Ok(R::from_usize(changed).unwrap() / R::from_usize(record.n).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn two_outcome_config() -> MeasurementConfig<f64> {
        MeasurementConfig {
            grid: Grid::plane(128, 128, 16.0, 20.0).unwrap(),
            hbar: 1.0,
            mass: [10.0, 50.0],
            coefficients: vec![C::new(0.3f64.sqrt(), 0.0), C::new(0.7f64.sqrt(), 0.0)],
            system_packets: vec![
                GaussianSpec::one_d(-3.0, 0.45, 0.0),
                GaussianSpec::one_d(3.0, 0.45, 0.0),
            ],
            pointer_ready: GaussianSpec::one_d(0.0, 0.5, 0.0),
            eigenvalues: vec![-1.0, 1.0],
            coupling: 4.0,
            duration: 1.0,
            overlap_limit: PACKET_OVERLAP_LIMIT,
        }
    }

    #[test]
    fn validation_accepts_the_reference_and_rejects_bad_inputs() {
        two_outcome_config().validate().unwrap();

        let mut close = two_outcome_config();
        close.system_packets[1] = GaussianSpec::one_d(-1.5, 0.45, 0.0); // ~3σ spacing
        assert!(matches!(close.validate(), Err(Error::PacketOverlap { .. })));

        let mut bad_coeff = two_outcome_config();
        bad_coeff.coefficients[0] = C::new(0.6, 0.0);
        assert!(matches!(bad_coeff.validate(), Err(Error::BadCoefficients { .. })));

        let mut far = two_outcome_config();
        far.coupling = 9.0; // pointer lands at ±9 on a half-extent of 10
        assert!(matches!(far.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn joint_initial_is_a_normalised_branch_sum() {
        let config = two_outcome_config();
        // Disjoint branches: the raw branch sum is already normalised.
        let grid = config.grid.clone();
        let mut raw_norm = KahanSum::new();
        let psi = build_joint_initial(&config).unwrap();
        for f in 0..grid.len() {
            raw_norm.add(psi.values[f].norm_sqr());
        }
        assert_relative_eq!(raw_norm.value() * grid.cell_volume(), 1.0, epsilon = 1e-9);

        // J = 1 degenerates to a product state.
        let single = MeasurementConfig {
            coefficients: vec![C::new(1.0, 0.0)],
            system_packets: vec![GaussianSpec::one_d(-3.0, 0.45, 0.0)],
            eigenvalues: vec![-1.0],
            ..config
        };
        let psi = build_joint_initial(&single).unwrap();
        let g = psi.grid().clone();
        let col_x = axis_profile(&g, 0, 1.0, &single.system_packets[0]);
        let col_y = axis_profile(&g, 1, 1.0, &single.pointer_ready);
        for ix in (0..g.points(0)).step_by(17) {
            for iy in (0..g.points(1)).step_by(13) {
                let got = psi.values[g.index(ix, iy)];
                assert!((got - col_x[ix] * col_y[iy]).norm() <= 1e-9);
            }
        }
    }

    #[test]
    fn single_outcome_coupling_is_a_pure_translation() {
        let mut config = two_outcome_config();
        config.coefficients = vec![C::new(1.0, 0.0)];
        config.system_packets = vec![GaussianSpec::one_d(-3.0, 0.45, 0.0)];
        config.eigenvalues = vec![1.0];
        let psi0 = build_joint_initial(&config).unwrap();
        let record = evolve_measurement(&psi0, &config, 8).unwrap();
        let ideal = ideal_final_state(&config).unwrap();
        let psi_t = record.final_state();
        let mut worst = 0.0f64;
        for (a, b) in psi_t.values.iter().zip(&ideal.values) {
            worst = worst.max((*a - *b).norm());
        }
        assert!(worst <= 1e-6, "translated pointer deviates by {worst:.2e}");
    }

    #[test]
    fn coupling_reaches_the_branch_target_and_idles_at_zero_g() {
        let config = two_outcome_config();
        let psi0 = build_joint_initial(&config).unwrap();
        let record = evolve_measurement(&psi0, &config, 8).unwrap();
        let ideal = ideal_final_state(&config).unwrap();
        let f = fidelity(record.final_state(), &ideal);
        assert!(f >= 1.0 - 1e-4, "fidelity {f}");

        let mut idle = config;
        idle.coupling = 0.0;
        let record = evolve_measurement(&psi0, &idle, 4).unwrap();
        let mut worst = 0.0f64;
        for (a, b) in record.final_state().values.iter().zip(&psi0.values) {
            worst = worst.max((*a - *b).norm());
        }
        assert!(worst <= 1e-12, "g = 0 moved the state by {worst:.2e}");
    }

    #[test]
    fn support_interval_matches_the_gaussian_quantile() {
        let config = two_outcome_config();
        let (lo, hi) = axis_support(&config.grid, 1, 1.0, &config.pointer_ready);
        // Density std of the ready packet is 0.5; 1−1e−8 of the mass sits
        // within ±√2·erfinv(1−1e−8)·σ ≈ ±5.731σ.
        let half_width = 5.7307 * 0.5;
        let delta = config.grid.spacing(1);
        assert!((lo + half_width).abs() <= 2.0 * delta, "lo = {lo}");
        assert!((hi - half_width).abs() <= 2.0 * delta, "hi = {hi}");
    }

    #[test]
    fn ensemble_weights_follow_the_born_rule_deterministically() {
        let config = two_outcome_config();
        let n = 2000;
        let (record, _) = run_measurement_ensemble(&config, n, 17, 8).unwrap();
        assert_eq!(record.counts.iter().sum::<usize>() + record.unclassified, n);
        assert!(record.unclassified as f64 / n as f64 <= 0.01);
        let w = record.weights();
        let margin = 3.0 * (0.3f64 * 0.7 / n as f64).sqrt();
        assert!((w[0] - 0.3).abs() <= margin, "w0 = {} vs 0.3 ± {margin:.3}", w[0]);

        let (again, _) = run_measurement_ensemble(&config, n, 17, 8).unwrap();
        assert_eq!(record.counts, again.counts);
        assert_eq!(record.unclassified, again.unclassified);

        let mut pure = config;
        pure.coefficients = vec![C::new(1.0, 0.0), C::new(0.0, 0.0)];
        let (record, _) = run_measurement_ensemble(&pure, 500, 3, 8).unwrap();
        assert_eq!(record.counts[1], 0);
        assert_eq!(record.counts[0] + record.unclassified, 500);
    }

    #[test]
    fn quadrature_weights_recover_the_born_weights() {
        let config = two_outcome_config();
        let psi0 = build_joint_initial(&config).unwrap();
        let supports = MeasurementSupports::build(&config);
        for (j, expect) in [(0usize, 0.3), (1usize, 0.7)] {
            let w = back_mapped_weight(&psi0, &supports, j);
            assert!((w - expect).abs() <= 1e-4, "w[{j}] = {w}");
        }
    }

    #[test]
    fn reduced_density_decoheres_with_the_pointer_separation() {
        let config = two_outcome_config();
        let psi0 = build_joint_initial(&config).unwrap();
        let c0 = 0.3f64.sqrt();
        let c1 = 0.7f64.sqrt();

        let before = reduced_density(&psi0, &config);
        assert!(before.hermiticity_error() <= 1e-12);
        assert!((before.trace().re - 1.0).abs() <= 1e-9);
        assert!((before.entry(0, 1).norm() - c0 * c1).abs() <= 1e-6);
        assert!(before.is_positive_semidefinite(1e-9));

        let record = evolve_measurement(&psi0, &config, 8).unwrap();
        let after = reduced_density(record.final_state(), &config);
        assert!(after.hermiticity_error() <= 1e-12);
        assert!((after.trace().re - 1.0).abs() <= 1e-9);
        assert!(
            after.entry(0, 1).norm() <= c0 * c1 * PACKET_OVERLAP_LIMIT + 1e-6,
            "off-diagonal {:.2e}",
            after.entry(0, 1).norm()
        );
        assert!((after.entry(0, 0).re - 0.3).abs() <= 1e-6);
        assert!((after.entry(1, 1).re - 0.7).abs() <= 1e-6);
        assert!(after.is_positive_semidefinite(1e-9));
    }

    #[test]
    fn projection_rule_assertions_pass_on_the_reference_run() {
        let config = two_outcome_config();
        let (record, evolution) = run_measurement_ensemble(&config, 2000, 29, 8).unwrap();
        let report = projection_rule_check(&record, evolution.final_state(), &config);
        for a in report.weight_match.iter().chain(report.density_match.iter()) {
            assert!(a.passed, "{}: {:.3e} > {:.3e}", a.name, a.measured, a.bound);
        }
        assert!(report.domain_agreement.passed);
        assert!(report.passed);
    }

    #[test]
    fn overlapping_pointers_fail_the_decoherence_assertion() {
        let mut config = two_outcome_config();
        // Pointer displacement ±0.9: packet overlap ≈ 0.2, far beyond the
        // design limit. Validation is relaxed; the bounds are not.
        config.coupling = 0.9;
        config.overlap_limit = 0.25;
        let (record, evolution) = run_measurement_ensemble(&config, 2000, 41, 8).unwrap();
        let report = projection_rule_check(&record, evolution.final_state(), &config);
        assert!(!report.passed);
        assert!(
            report.density_match.iter().any(|a| !a.passed),
            "decoherence incompleteness went unreported"
        );
    }

    #[test]
    fn classifications_survive_the_post_measurement_drift() {
        let config = two_outcome_config();
        let (record, evolution) = run_measurement_ensemble(&config, 1000, 53, 8).unwrap();
        let changed = indicator_drift_fraction(&record, evolution.final_state(), 0.25, 2.5e-3, 25)
            .unwrap();
        assert!(changed <= 0.01, "drift re-classified {changed:.3} of the ensemble");
    }
}
