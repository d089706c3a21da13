//! Scenario dispatch: one validated config in, deterministic artifacts out.
//!
//! Every run writes `summary.json`; sampling runs write a trajectory CSV;
//! `output.fields > 0` adds columnar field snapshots. All numbers print
//! through shortest-round-trip formatting, so a fixed seed reproduces every
//! artifact byte-for-byte (only the summary's metadata timestamp moves).

use crate::config::{
    HjBlock, Kind, MeasureBlock, PotentialKind, ScenarioConfig, Sense, SpinBlock,
};
use anyhow::{anyhow, Context, Result};
use num_complex::Complex64;
use pilotwave::bohm::{
    check_equivariance, check_expectation, no_crossing_violations, run_ensemble, EnsembleOptions,
    NodePolicy,
};
use pilotwave::field::{packet_superposition, GaussianSpec, WaveFunction};
use pilotwave::grid::Grid;
use pilotwave::hj::{run_zeta_ensemble, HJFluid, QuadraticHJState, QuadraticPotential};
use pilotwave::io::{
    format_field, format_outcome_trajectories, format_spin_trajectories, format_spinor,
    format_trajectories, TrajectoryMeta, TrajectoryWriteOptions,
};
use pilotwave::measurement::{
    projection_rule_check, reduced_density, run_measurement_ensemble, DensityMatrix,
    MeasurementConfig, PACKET_OVERLAP_LIMIT,
};
use pilotwave::pauli::{
    evolve_pauli, run_spin_ensemble, stern_gerlach_run, FieldConfig, PauliParams, SpinorField,
    SternGerlachConfig,
};
use pilotwave::scalar::C;
use pilotwave::schrodinger::{evolve, Potential};
use pilotwave::stats::{histogram, mean_and_se, tv_distance};
use serde::Serialize;
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

#[derive(Serialize)]
pub struct Meta {
    pub tool: &'static str,
    pub version: &'static str,
    pub scenario: String,
    pub kind: &'static str,
    pub seed: Option<u64>,
    /// Wall-clock seconds since the epoch; the only non-deterministic byte
    /// in any artifact.
    pub timestamp: Option<String>,
}

#[derive(Serialize)]
pub struct AssertionJson {
    pub name: String,
    pub op: &'static str,
    pub measured: f64,
    pub bound: f64,
    pub passed: bool,
}

#[derive(Serialize)]
pub struct Summary {
    pub meta: Meta,
    pub config: Value,
    pub results: Value,
    pub assertions: Vec<AssertionJson>,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

fn timestamp() -> String {
    let now = SystemTime::now().duration_since(UNIX_EPOCH).unwrap_or_default();
    format!("{}.{:09}", now.as_secs(), now.subsec_nanos())
}

fn meta_for(config: &ScenarioConfig) -> Meta {
    Meta {
        tool: "pilotwave",
        version: env!("CARGO_PKG_VERSION"),
        scenario: config.name.clone(),
        kind: config.kind.label(),
        seed: config.run.seed,
        timestamp: Some(timestamp()),
    }
}

fn config_echo(config: &ScenarioConfig) -> Value {
    let mut echo = json!({
        "kind": config.kind.label(),
        "name": config.name,
        "grid": { "points": config.grid.points, "extent": config.grid.extent },
        "physics": {
            "hbar": config.physics.hbar,
            "mass": config.physics.mass,
            "potential": match config.physics.potential {
                PotentialKind::Free => "free",
                PotentialKind::Harmonic => "harmonic",
                PotentialKind::Linear => "linear",
            },
            "omega": config.physics.omega,
            "force": config.physics.force,
        },
        "run": {
            "duration": config.run.duration,
            "dt": config.run.dt,
            "stride": config.run.stride,
            "samples": config.run.samples,
            "seed": config.run.seed,
            "substeps": config.run.substeps,
        },
        "output": {
            "fields": config.output.fields,
            "trajectories": config.output.trajectories,
            "bins": config.output.bins,
        },
        "assert": config.asserts,
    });
    let map = echo.as_object_mut().expect("echo is an object");
    if !config.packets.is_empty() {
        let packets: Vec<Value> = config
            .packets
            .iter()
            .map(|p| {
                json!({
                    "amplitude": [p.amplitude.0, p.amplitude.1],
                    "center": p.center,
                    "sigma": p.sigma,
                    "momentum": p.momentum,
                })
            })
            .collect();
        map.insert("state".into(), json!({ "packets": packets }));
    }
    if let Some(s) = &config.spin {
        map.insert(
            "spin".into(),
            json!({
                "coefficients": [[s.coefficients[0].0, s.coefficients[0].1],
                                 [s.coefficients[1].0, s.coefficients[1].1]],
                "moment": s.moment,
                "charge": s.charge,
                "light_speed": s.light_speed,
                "center": s.center,
                "sigma": s.sigma,
                "momentum": s.momentum,
                "magnetic_field": s.magnetic_field,
                "gradient": s.gradient,
            }),
        );
    }
    if let Some(m) = &config.measure {
        let coeffs: Vec<[f64; 2]> = m.coefficients.iter().map(|c| [c.0, c.1]).collect();
        map.insert(
            "measure".into(),
            json!({
                "coefficients": coeffs,
                "system_centers": m.system_centers,
                "system_sigma": m.system_sigma,
                "pointer_sigma": m.pointer_sigma,
                "eigenvalues": m.eigenvalues,
                "coupling": m.coupling,
                "snapshots": m.snapshots,
                "drift_fraction": m.drift_fraction,
            }),
        );
    }
    if let Some(h) = &config.hj {
        map.insert("hj".into(), json!({ "a0": h.a0, "b0": h.b0, "c0": h.c0 }));
    }
    echo
}

/// Evaluate the configured assertions against the measured values.
fn assertion_rows(
    config: &ScenarioConfig,
    measured: &BTreeMap<&'static str, f64>,
) -> Result<(Vec<AssertionJson>, bool)> {
    let senses: BTreeMap<&str, Sense> = config.kind.assertion_names().iter().copied().collect();
    let mut rows = Vec::new();
    let mut all = true;
    for (name, bound) in &config.asserts {
        let sense = senses[name.as_str()];
        let value = *measured.get(name.as_str()).ok_or_else(|| {
            anyhow!("assertion `{name}` has no measured value in this run (check the scenario)")
        })?;
        let passed = sense.holds(value, *bound);
        all &= passed;
        rows.push(AssertionJson {
            name: name.clone(),
            op: sense.symbol(),
            measured: value,
            bound: *bound,
            passed,
        });
    }
    Ok((rows, all))
}

fn write_summary(out_dir: &Path, summary: &Summary) -> Result<()> {
    let mut text = serde_json::to_string_pretty(summary)?;
    text.push('\n');
    fs::write(out_dir.join("summary.json"), text).context("writing summary.json")?;
    Ok(())
}

fn write_scalar_fields(out_dir: &Path, snapshots: &[WaveFunction<f64>], every: usize) -> Result<()> {
    if every == 0 {
        return Ok(());
    }
    for (idx, snap) in snapshots.iter().enumerate() {
        if idx % every == 0 || idx + 1 == snapshots.len() {
            fs::write(out_dir.join(format!("field_{idx:04}.txt")), format_field(snap))?;
        }
    }
    Ok(())
}

fn write_spinor_fields(out_dir: &Path, snapshots: &[SpinorField<f64>], every: usize) -> Result<()> {
    if every == 0 {
        return Ok(());
    }
    for (idx, snap) in snapshots.iter().enumerate() {
        if idx % every == 0 || idx + 1 == snapshots.len() {
            fs::write(out_dir.join(format!("spinor_{idx:04}.txt")), format_spinor(snap))?;
        }
    }
    Ok(())
}

fn axis_masses(config: &ScenarioConfig) -> [f64; 2] {
    let m = &config.physics.mass;
    [m[0], m.get(1).copied().unwrap_or(m[0])]
}

fn line_grid(config: &ScenarioConfig) -> Result<Grid<f64>> {
    Ok(Grid::line(config.grid.points[0], config.grid.extent[0])?)
}

fn scalar_potential(config: &ScenarioConfig) -> Potential<f64> {
    match config.physics.potential {
        PotentialKind::Free => Potential::Free,
        PotentialKind::Harmonic => Potential::harmonic_1d(config.physics.omega),
        PotentialKind::Linear => Potential::Linear { force: [config.physics.force, 0.0] },
    }
}

fn packet_state(config: &ScenarioConfig) -> Result<WaveFunction<f64>> {
    let grid = line_grid(config)?;
    let parts: Vec<(C<f64>, GaussianSpec<f64>)> = config
        .packets
        .iter()
        .map(|p| {
            (C::new(p.amplitude.0, p.amplitude.1),
             GaussianSpec::one_d(p.center, p.sigma, p.momentum))
        })
        .collect();
    Ok(packet_superposition(grid, config.physics.hbar, axis_masses(config), &parts)?)
}

fn csv_options(config: &ScenarioConfig, rows_per_trajectory: usize) -> TrajectoryWriteOptions {
    // Keep CSVs plot-sized: at most ~256 rows per trajectory.
    TrajectoryWriteOptions {
        stride: (rows_per_trajectory / 256).max(1),
        max_trajectories: Some(config.output.trajectories),
    }
}

fn run_evolve(config: &ScenarioConfig, out_dir: &Path) -> Result<(Value, BTreeMap<&'static str, f64>)> {
    let psi0 = packet_state(config)?;
    let potential = scalar_potential(config);
    let record = evolve(&psi0, &potential, config.run.duration, config.run.dt, config.run.stride)?;
    write_scalar_fields(out_dir, &record.snapshots, config.output.fields)?;
    let last = record.snapshots.last().expect("at least one snapshot");
    let measured = BTreeMap::from([
        ("norm_drift", record.norm_drift),
        ("energy_drift", record.energy_drift),
    ]);
    let results = json!({
        "snapshots": record.snapshots.len(),
        "norm_drift": record.norm_drift,
        "energy_drift": record.energy_drift,
        "boundary_warning": record.boundary_warning,
        "final_mean_position": last.expectation_position()[0],
    });
    Ok((results, measured))
}

fn run_trajectories(
    config: &ScenarioConfig,
    out_dir: &Path,
) -> Result<(Value, BTreeMap<&'static str, f64>)> {
    let psi0 = packet_state(config)?;
    let potential = scalar_potential(config);
    let seed = config.run.seed.expect("validated sampling scenario");
    let options = EnsembleOptions {
        stride: config.run.stride,
        substeps: config.run.substeps,
        policy: None,
    };
    let (record, ensemble) = run_ensemble(
        &psi0,
        &potential,
        config.run.duration,
        config.run.dt,
        config.run.samples,
        seed,
        options,
    )?;
    write_scalar_fields(out_dir, &record.snapshots, config.output.fields)?;

    let checks = check_expectation(&ensemble, &record);
    let excess = checks
        .iter()
        .map(|c| c.discrepancy[0] - c.bound_3se[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let tv = check_equivariance(
        &ensemble,
        record.snapshots.last().expect("snapshots"),
        config.output.bins,
    );
    let crossings = no_crossing_violations(&ensemble);
    let (node_flagged, boundary_flagged) = ensemble.flag_counts();

    let meta = TrajectoryMeta {
        seed,
        grid: record.grid().clone(),
        dt: record.snapshot_dt(),
    };
    let opts = csv_options(config, ensemble.times.len());
    fs::write(
        out_dir.join("trajectories.csv"),
        format_trajectories(&meta, &ensemble.trajectories, opts),
    )?;

    let expectation_series: Vec<Value> = checks
        .iter()
        .map(|c| {
            json!({
                "time": c.time,
                "discrepancy": c.discrepancy[0],
                "bound_3se": c.bound_3se[0],
                "alive": c.n_used,
            })
        })
        .collect();
    let measured = BTreeMap::from([
        ("norm_drift", record.norm_drift),
        ("tv_distance", tv),
        ("expectation_excess", excess),
        ("crossings", crossings as f64),
    ]);
    let results = json!({
        "snapshots": record.snapshots.len(),
        "norm_drift": record.norm_drift,
        "energy_drift": record.energy_drift,
        "boundary_warning": record.boundary_warning,
        "tv_distance_final": tv,
        "equivariance_bins": config.output.bins,
        "crossings": crossings,
        "flagged": { "node": node_flagged, "boundary": boundary_flagged },
        "expectation": expectation_series,
    });
    Ok((results, measured))
}

/// `⟨S₃⟩(t)` of a uniform-field precession from the closed-form 2×2
/// rotation `exp(−i·(μ|B|t/ħ)·n̂·σ)` applied to the initial spinor weights.
fn precession_oracle(spin: &SpinBlock, hbar: f64, b: [f64; 3], t: f64) -> f64 {
    let c_plus = Complex64::new(spin.coefficients[0].0, spin.coefficients[0].1);
    let c_minus = Complex64::new(spin.coefficients[1].0, spin.coefficients[1].1);
    let norm = (c_plus.norm_sqr() + c_minus.norm_sqr()).sqrt();
    let (c_plus, c_minus) = (c_plus / norm, c_minus / norm);
    let mag = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    if mag == 0.0 {
        return 0.5 * hbar * (c_plus.norm_sqr() - c_minus.norm_sqr());
    }
    let n = [b[0] / mag, b[1] / mag, b[2] / mag];
    let theta = spin.moment * mag * t / hbar;
    let (cos, sin) = (theta.cos(), theta.sin());
    let i = Complex64::i();
    // U = cosθ·I − i sinθ·(n̂·σ)
    let u00 = Complex64::new(cos, 0.0) - i * sin * n[2];
    let u01 = -i * sin * Complex64::new(n[0], -n[1]);
    let u10 = -i * sin * Complex64::new(n[0], n[1]);
    let u11 = Complex64::new(cos, 0.0) + i * sin * n[2];
    let up = u00 * c_plus + u01 * c_minus;
    let down = u10 * c_plus + u11 * c_minus;
    0.5 * hbar * (up.norm_sqr() - down.norm_sqr())
}

fn spin_setup(config: &ScenarioConfig) -> Result<(Grid<f64>, PauliParams<f64>, GaussianSpec<f64>, [C<f64>; 2])> {
    let spin = config.spin.as_ref().expect("validated spin scenario");
    let grid = line_grid(config)?;
    let params = PauliParams {
        hbar: config.physics.hbar,
        mass: config.physics.mass[0],
        charge: spin.charge,
        light_speed: spin.light_speed,
        moment: spin.moment,
    };
    let spec = GaussianSpec::one_d(spin.center, spin.sigma, spin.momentum);
    let coeffs = [
        C::new(spin.coefficients[0].0, spin.coefficients[0].1),
        C::new(spin.coefficients[1].0, spin.coefficients[1].1),
    ];
    Ok((grid, params, spec, coeffs))
}

fn run_pauli(config: &ScenarioConfig, out_dir: &Path) -> Result<(Value, BTreeMap<&'static str, f64>)> {
    let spin = config.spin.as_ref().expect("validated spin scenario");
    let b = spin.magnetic_field.expect("validated pauli scenario");
    let (grid, params, spec, coeffs) = spin_setup(config)?;
    let psi0 = SpinorField::from_packet(grid.clone(), params, spec, coeffs)?;
    let fields = FieldConfig::uniform_b(b);
    let record = evolve_pauli(&psi0, &fields, config.run.duration, config.run.dt, config.run.stride)?;
    write_spinor_fields(out_dir, &record.snapshots, config.output.fields)?;

    let hbar = config.physics.hbar;
    let mut oracle_error = 0.0f64;
    let mut s3_series = Vec::new();
    for snap in &record.snapshots {
        let measured = snap.spin_expectation()[2];
        let expected = precession_oracle(spin, hbar, b, snap.time);
        oracle_error = oracle_error.max((measured - expected).abs());
        s3_series.push(json!({ "time": snap.time, "s3": measured, "oracle": expected }));
    }

    let seed = config.run.seed.expect("validated sampling scenario");
    let policy = NodePolicy::for_run(&grid, config.run.duration);
    let ensemble = run_spin_ensemble(
        &record,
        &fields,
        &policy,
        config.run.samples,
        seed,
        config.run.substeps,
    )?;
    let mut ensemble_excess = f64::NEG_INFINITY;
    for (idx, snap) in record.snapshots.iter().enumerate() {
        let values: Vec<f64> = ensemble
            .trajectories
            .iter()
            .filter(|t| t.s3.len() > idx)
            .map(|t| t.s3[idx])
            .collect();
        if values.len() < 2 {
            continue;
        }
        let (mean, se) = mean_and_se(&values);
        let expected = snap.spin_expectation()[2];
        ensemble_excess = ensemble_excess.max((mean - expected).abs() - 3.0 * se);
    }

    let meta = TrajectoryMeta {
        seed,
        grid: grid.clone(),
        dt: record.snapshot_dt(),
    };
    let opts = csv_options(config, ensemble.times.len());
    fs::write(
        out_dir.join("trajectories.csv"),
        format_spin_trajectories(&meta, &ensemble.trajectories, opts),
    )?;

    let measured = BTreeMap::from([
        ("norm_drift", record.norm_drift),
        ("oracle_error", oracle_error),
        ("ensemble_excess", ensemble_excess),
    ]);
    let results = json!({
        "snapshots": record.snapshots.len(),
        "norm_drift": record.norm_drift,
        "boundary_warning": record.boundary_warning,
        "oracle_error": oracle_error,
        "ensemble_excess": ensemble_excess,
        "s3": s3_series,
    });
    Ok((results, measured))
}

fn run_stern_gerlach(
    config: &ScenarioConfig,
    out_dir: &Path,
) -> Result<(Value, BTreeMap<&'static str, f64>)> {
    let spin = config.spin.as_ref().expect("validated spin scenario");
    let gradient = spin.gradient.expect("validated stern-gerlach scenario");
    let (grid, params, spec, coeffs) = spin_setup(config)?;
    let seed = config.run.seed.expect("validated sampling scenario");
    let sg = SternGerlachConfig {
        grid: grid.clone(),
        params,
        packet: spec,
        coeffs,
        gradient,
        duration: config.run.duration,
        dt: config.run.dt,
        stride: config.run.stride,
        trajectories: config.run.samples,
        substeps: config.run.substeps,
        seed,
    };
    let report = stern_gerlach_run(&sg)?;
    write_spinor_fields(out_dir, &report.record.snapshots, config.output.fields)?;

    let n = config.run.samples as f64;
    let sigma = (report.expected_up * (1.0 - report.expected_up) / n).sqrt();
    let fraction_sigma = if sigma > 0.0 {
        (report.up_fraction - report.expected_up).abs() / sigma
    } else if report.up_fraction == report.expected_up {
        0.0
    } else {
        f64::INFINITY
    };
    let separation = *report.separations.last().expect("at least one snapshot");

    let meta = TrajectoryMeta {
        seed,
        grid,
        dt: report.record.snapshot_dt(),
    };
    let opts = csv_options(config, report.ensemble.times.len());
    fs::write(
        out_dir.join("trajectories.csv"),
        format_spin_trajectories(&meta, &report.ensemble.trajectories, opts),
    )?;

    let measured = BTreeMap::from([
        ("norm_drift", report.record.norm_drift),
        ("s3_step", if report.s3_constant { 0.0 } else { 1.0 }),
        ("fraction_sigma", fraction_sigma),
        ("overlap", report.population_overlap),
        ("separation", separation),
    ]);
    let results = json!({
        "norm_drift": report.record.norm_drift,
        "boundary_warning": report.record.boundary_warning,
        "up_fraction": report.up_fraction,
        "expected_up": report.expected_up,
        "fraction_sigma": fraction_sigma,
        "s3_bitwise_constant": report.s3_constant,
        "population_overlap": report.population_overlap,
        "separations": report.separations,
        "mean_positions": { "plus": report.mean_positions[0], "minus": report.mean_positions[1] },
    });
    Ok((results, measured))
}

fn density_matrix_json(m: &DensityMatrix<f64>) -> Value {
    let re: Vec<Vec<f64>> = (0..m.dim)
        .map(|j| (0..m.dim).map(|k| m.entry(j, k).re).collect())
        .collect();
    let im: Vec<Vec<f64>> = (0..m.dim)
        .map(|j| (0..m.dim).map(|k| m.entry(j, k).im).collect())
        .collect();
    json!({ "re": re, "im": im })
}

fn measurement_config(config: &ScenarioConfig, block: &MeasureBlock) -> Result<MeasurementConfig<f64>> {
    let grid = Grid::plane(
        config.grid.points[0],
        config.grid.points[1],
        config.grid.extent[0],
        config.grid.extent[1],
    )?;
    Ok(MeasurementConfig {
        grid,
        hbar: config.physics.hbar,
        mass: axis_masses(config),
        coefficients: block.coefficients.iter().map(|c| C::new(c.0, c.1)).collect(),
        system_packets: block
            .system_centers
            .iter()
            .map(|&c| GaussianSpec::one_d(c, block.system_sigma, 0.0))
            .collect(),
        pointer_ready: GaussianSpec::one_d(0.0, block.pointer_sigma, 0.0),
        eigenvalues: block.eigenvalues.clone(),
        coupling: block.coupling,
        duration: config.run.duration,
        overlap_limit: PACKET_OVERLAP_LIMIT,
    })
}

fn run_measure(config: &ScenarioConfig, out_dir: &Path) -> Result<(Value, BTreeMap<&'static str, f64>)> {
    let block = config.measure.as_ref().expect("validated measure scenario");
    let mc = measurement_config(config, block)?;
    let seed = config.run.seed.expect("validated sampling scenario");
    let n = config.run.samples;
    let (outcome, evolution) = run_measurement_ensemble(&mc, n, seed, block.snapshots)?;
    let final_state = evolution.final_state();
    let report = projection_rule_check(&outcome, final_state, &mc);

    let weights = outcome.weights();
    let ses = outcome.standard_errors();
    let born: Vec<f64> = mc.coefficients.iter().map(|c| c.norm_sqr()).collect();
    let weight_sigma = weights
        .iter()
        .zip(&ses)
        .zip(&born)
        .map(|((w, se), b)| {
            let diff = (w - b).abs();
            if diff == 0.0 {
                0.0
            } else if *se > 0.0 {
                diff / se
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0f64, f64::max);
    let unclassified = outcome.unclassified as f64 / n as f64;
    let failures = report
        .weight_match
        .iter()
        .chain(report.density_match.iter())
        .chain(std::iter::once(&report.domain_agreement))
        .filter(|a| !a.passed)
        .count();

    let mut measured = BTreeMap::from([
        ("weight_sigma", weight_sigma),
        ("unclassified", unclassified),
        ("projection_failures", failures as f64),
    ]);
    let mut drift_json = Value::Null;
    if block.drift_fraction > 0.0 {
        let drift_duration = config.run.duration * block.drift_fraction;
        let changed = pilotwave::measurement::indicator_drift_fraction(
            &outcome,
            final_state,
            drift_duration,
            config.run.dt,
            config.run.stride,
        )?;
        measured.insert("drift_reclassified", changed);
        drift_json = json!({ "duration": drift_duration, "reclassified": changed });
    }

    write_scalar_fields(out_dir, &evolution.snapshots, config.output.fields)?;
    let meta = TrajectoryMeta {
        seed,
        grid: mc.grid.clone(),
        dt: evolution.dt,
    };
    let opts = csv_options(config, evolution.snapshots.len());
    fs::write(
        out_dir.join("trajectories.csv"),
        format_outcome_trajectories(&meta, &outcome.trajectories, &outcome.outcomes, opts),
    )?;

    let rho_initial = reduced_density(&evolution.snapshots[0], &mc);
    let rho_final = reduced_density(final_state, &mc);
    let checks: Vec<Value> = report
        .weight_match
        .iter()
        .chain(std::iter::once(&report.domain_agreement))
        .chain(report.density_match.iter())
        .map(|a| {
            json!({ "name": a.name, "measured": a.measured, "bound": a.bound, "passed": a.passed })
        })
        .collect();
    let results = json!({
        "counts": outcome.counts,
        "unclassified": outcome.unclassified,
        "weights": weights,
        "standard_errors": ses,
        "born_weights": born,
        "weight_sigma": weight_sigma,
        "reduced_density_initial": density_matrix_json(&rho_initial),
        "reduced_density_final": density_matrix_json(&rho_final),
        "reconstructed_density": density_matrix_json(&outcome.reconstructed_density()),
        "projection_checks": checks,
        "projection_passed": report.passed,
        "drift": drift_json,
    });
    Ok((results, measured))
}

fn hamilton_oracle(hj: &HjBlock, config: &ScenarioConfig, q0: f64, t: f64) -> f64 {
    let m = config.physics.mass[0];
    let p0 = 2.0 * hj.a0 * q0 + hj.b0;
    match config.physics.potential {
        PotentialKind::Free => q0 + p0 * t / m,
        PotentialKind::Linear => {
            q0 + p0 * t / m + config.physics.force * t * t / (2.0 * m)
        }
        PotentialKind::Harmonic => {
            let omega = config.physics.omega;
            q0 * (omega * t).cos() + p0 / (m * omega) * (omega * t).sin()
        }
    }
}

fn run_hj(config: &ScenarioConfig, out_dir: &Path) -> Result<(Value, BTreeMap<&'static str, f64>)> {
    let hj = config.hj.as_ref().expect("validated hj scenario");
    let grid = line_grid(config)?;
    let m = config.physics.mass[0];
    let potential = match config.physics.potential {
        PotentialKind::Free => QuadraticPotential::Free,
        PotentialKind::Harmonic => QuadraticPotential::Harmonic { omega: config.physics.omega },
        PotentialKind::Linear => QuadraticPotential::Linear { force: config.physics.force },
    };
    let packet = config
        .packets
        .first()
        .ok_or_else(|| anyhow!("hj-compare needs one state packet for the initial density"))?;
    let rho0 = packet_state(config)?.density();
    let state = QuadraticHJState::new(hj.a0, hj.b0, hj.c0, m, potential);
    let seed = config.run.seed.expect("validated sampling scenario");
    let trajectories = run_zeta_ensemble(
        &state,
        &rho0,
        config.run.duration,
        config.run.dt,
        config.run.samples,
        seed,
    )?;

    let mut oracle_error = 0.0f64;
    let mut caustics = 0usize;
    for t in &trajectories {
        if t.status != pilotwave::bohm::TrajectoryStatus::Complete {
            caustics += 1;
            continue;
        }
        for (time, point) in t.times.iter().zip(&t.points) {
            let expected = hamilton_oracle(hj, config, t.x0[0], *time);
            oracle_error = oracle_error.max((point[0] - expected).abs());
        }
    }

    let finals: Vec<f64> = trajectories.iter().map(|t| t.final_point()[0]).collect();
    let mut fluid = HJFluid::new(state, rho0)?;
    fluid.advance(config.run.duration)?;
    let expected_masses = fluid.transported_bin_masses(config.output.bins);
    let half = grid.extent(0) / 2.0;
    let counts = histogram(&finals, config.output.bins, -half, half);
    let sampled: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
    let tv = tv_distance(&sampled, &expected_masses);

    let meta = TrajectoryMeta { seed, grid, dt: config.run.dt };
    let rows = trajectories.first().map_or(1, |t| t.times.len());
    let opts = csv_options(config, rows);
    fs::write(
        out_dir.join("trajectories.csv"),
        format_trajectories(&meta, &trajectories, opts),
    )?;

    let (mean, se) = mean_and_se(&finals);
    let measured = BTreeMap::from([("oracle_error", oracle_error), ("tv_distance", tv)]);
    let results = json!({
        "oracle_error": oracle_error,
        "tv_distance": tv,
        "bins": config.output.bins,
        "caustic_truncated": caustics,
        "final_mean": mean,
        "final_se": se,
        "packet": { "center": packet.center, "sigma": packet.sigma },
    });
    Ok((results, measured))
}

/// Run one scenario, writing all artifacts under `out_dir`. `Ok(passed)`
/// reports the assertion verdict; `Err` is a runtime failure (an error
/// summary is still written).
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<bool> {
    fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let outcome = match config.kind {
        Kind::Evolve => run_evolve(config, out_dir),
        Kind::Trajectories => run_trajectories(config, out_dir),
        Kind::Pauli => run_pauli(config, out_dir),
        Kind::SternGerlach => run_stern_gerlach(config, out_dir),
        Kind::Measure => run_measure(config, out_dir),
        Kind::HjCompare => run_hj(config, out_dir),
    };
    match outcome {
        Ok((results, measured)) => {
            let (assertions, passed) = assertion_rows(config, &measured)?;
            let summary = Summary {
                meta: meta_for(config),
                config: config_echo(config),
                results,
                assertions,
                passed,
                error: None,
            };
            write_summary(out_dir, &summary)?;
            Ok(passed)
        }
        Err(err) => {
            let summary = Summary {
                meta: meta_for(config),
                config: config_echo(config),
                results: Value::Null,
                assertions: Vec::new(),
                passed: false,
                error: Some(format!("{err:#}")),
            };
            write_summary(out_dir, &summary)?;
            Err(err)
        }
    }
}
