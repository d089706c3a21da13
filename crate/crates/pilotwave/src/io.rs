//! Plot-ready text formats: columnar fields and trajectory CSV.
//!
//! Both formats are deterministic — floats print through Rust's
//! shortest-round-trip `Display`, so identical data yields identical bytes
//! and a parse recovers every bit.
//!
//! Field files:
//!
//! ```text
//! # field dims=1 points=256 extent=20 time=0.5 hbar=1 mass=1,1 components=1
//! <x> <re> <im>
//! ```
//!
//! Two-dimensional fields add a `y` coordinate column (values in row-major
//! `x`-outer order); spinor files carry `components=2` with `re im` pairs per
//! branch, plus the extra physical constants in the header.
//!
//! Trajectory files:
//!
//! ```text
//! # trajectories seed=7 n=100 dims=1 points=256 extent=20 dt=0.01
//! id,t,x,status
//! ```
//!
//! Spin runs add `lambda0,s3` columns; measurement runs add `y` and an
//! `outcome` column (`-` when unclassified).

use crate::bohm::Trajectory;
use crate::error::{Error, Result};
use crate::field::WaveFunction;
use crate::grid::Grid;
use crate::pauli::{PauliParams, SpinTrajectory, SpinorField};
use crate::scalar::{C, Real};
use std::fmt::Write as _;

fn push_axis_values<R: Real>(out: &mut String, key: &str, grid: &Grid<R>, f: impl Fn(usize) -> R) {
    out.push_str(key);
    out.push('=');
    for axis in 0..grid.dims() {
        if axis > 0 {
            out.push(',');
        }
        let _ = write!(out, "{}", f(axis).as_f64());
    }
}

fn field_header<R: Real>(grid: &Grid<R>, time: R, hbar: R, components: usize) -> String {
    let mut h = String::from("# field ");
    let _ = write!(h, "dims={} ", grid.dims());
    h.push_str("points=");
    for axis in 0..grid.dims() {
        if axis > 0 {
            h.push(',');
        }
        let _ = write!(h, "{}", grid.points(axis));
    }
    h.push(' ');
    push_axis_values(&mut h, "extent", grid, |a| grid.extent(a));
    let _ = write!(h, " time={} hbar={}", time.as_f64(), hbar.as_f64());
    let _ = write!(h, " components={components}");
    h
}

/// Columnar text for a scalar wavefunction.
pub fn format_field<R: Real>(psi: &WaveFunction<R>) -> String {
    let grid = psi.grid();
    let mut header = field_header(grid, psi.time, psi.hbar, 1);
    let mass = psi.mass;
    header.insert_str(
        header.find(" components=").expect("header carries components"),
        &format!(" mass={},{}", mass[0].as_f64(), mass[1].as_f64()),
    );
    let mut out = header;
    out.push('\n');
    for f in 0..grid.len() {
        let p = grid.point(f);
        for axis in 0..grid.dims() {
            let _ = write!(out, "{} ", p[axis].as_f64());
        }
        let v = psi.values[f];
        let _ = writeln!(out, "{} {}", v.re.as_f64(), v.im.as_f64());
    }
    out
}

/// Columnar text for a two-component spinor field.
pub fn format_spinor<R: Real>(psi: &SpinorField<R>) -> String {
    let grid = psi.grid();
    let p = &psi.params;
    let mut header = field_header(grid, psi.time, p.hbar, 2);
    header.insert_str(
        header.find(" components=").expect("header carries components"),
        &format!(
            " mass={} charge={} light_speed={} moment={}",
            p.mass.as_f64(),
            p.charge.as_f64(),
            p.light_speed.as_f64(),
            p.moment.as_f64()
        ),
    );
    let mut out = header;
    out.push('\n');
    for f in 0..grid.len() {
        let x = grid.point(f)[0];
        let v = psi.values[f];
        let _ = writeln!(
            out,
            "{} {} {} {} {}",
            x.as_f64(),
            v[0].re.as_f64(),
            v[0].im.as_f64(),
            v[1].re.as_f64(),
            v[1].im.as_f64()
        );
    }
    out
}

struct HeaderMap {
    pairs: Vec<(String, String)>,
}

impl HeaderMap {
    fn parse(line: &str, kind: &str) -> Result<Self> {
        let mut tokens = line.split_whitespace();
        if tokens.next() != Some("#") || tokens.next() != Some(kind) {
            return Err(Error::Parse {
                line: 1,
                reason: format!("expected a `# {kind}` header"),
            });
        }
        let mut pairs = Vec::new();
        for tok in tokens {
            let (k, v) = tok.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                reason: format!("malformed header token `{tok}`"),
            })?;
            pairs.push((k.to_string(), v.to_string()));
        }
        Ok(Self { pairs })
    }

    fn get(&self, key: &str) -> Result<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::Parse { line: 1, reason: format!("missing header key `{key}`") })
    }

    fn scalar<R: Real>(&self, key: &str) -> Result<R> {
        parse_real(self.get(key)?, 1)
    }

    fn list<R: Real>(&self, key: &str, want: usize) -> Result<Vec<R>> {
        let parts: Vec<&str> = self.get(key)?.split(',').collect();
        if parts.len() != want {
            return Err(Error::Parse {
                line: 1,
                reason: format!("key `{key}` wants {want} comma-separated values"),
            });
        }
        parts.into_iter().map(|p| parse_real(p, 1)).collect()
    }
}

fn parse_real<R: Real>(text: &str, line: usize) -> Result<R> {
    text.parse::<f64>()
        .map(R::lit)
        .map_err(|_| Error::Parse { line, reason: format!("not a number: `{text}`") })
}

fn parse_grid(header: &HeaderMap) -> Result<Grid<f64>> {
    let dims: usize = header
        .get("dims")?
        .parse()
        .map_err(|_| Error::Parse { line: 1, reason: "dims must be an integer".into() })?;
    if dims == 0 || dims > 2 {
        return Err(Error::Parse { line: 1, reason: format!("unsupported dims={dims}") });
    }
    let points: Vec<usize> = header
        .get("points")?
        .split(',')
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Parse { line: 1, reason: "points must be integers".into() })
        })
        .collect::<Result<_>>()?;
    if points.len() != dims {
        return Err(Error::Parse { line: 1, reason: "points arity != dims".into() });
    }
    let extent: Vec<f64> = header.list("extent", dims)?;
    if dims == 1 {
        Grid::line(points[0], extent[0])
    } else {
        Grid::plane(points[0], points[1], extent[0], extent[1])
    }
}

/// Parse a scalar field file back into a (re-normalised) wavefunction.
pub fn parse_field(text: &str) -> Result<WaveFunction<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, reason: "empty field file".into() })?;
    let header = HeaderMap::parse(first, "field")?;
    let components: usize = header
        .get("components")?
        .parse()
        .map_err(|_| Error::Parse { line: 1, reason: "components must be an integer".into() })?;
    if components != 1 {
        return Err(Error::Parse {
            line: 1,
            reason: format!("expected components=1, got {components}"),
        });
    }
    let grid = parse_grid(&header)?;
    let time: f64 = header.scalar("time")?;
    let hbar: f64 = header.scalar("hbar")?;
    let mass: Vec<f64> = header.list("mass", 2)?;
    let mut values = Vec::with_capacity(grid.len());
    for (idx, row) in lines {
        let line = idx + 1;
        if row.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = row.split_whitespace().collect();
        if cols.len() != grid.dims() + 2 {
            return Err(Error::Parse {
                line,
                reason: format!("expected {} columns, found {}", grid.dims() + 2, cols.len()),
            });
        }
        let re: f64 = parse_real(cols[grid.dims()], line)?;
        let im: f64 = parse_real(cols[grid.dims() + 1], line)?;
        values.push(C::new(re, im));
    }
    if values.len() != grid.len() {
        return Err(Error::Parse {
            line: text.lines().count(),
            reason: format!("expected {} rows, found {}", grid.len(), values.len()),
        });
    }
    WaveFunction::new(grid, values, hbar, [mass[0], mass[1]], time)
}

/// Parse a spinor field file (components=2).
pub fn parse_spinor(text: &str) -> Result<SpinorField<f64>> {
    let mut lines = text.lines().enumerate();
    let (_, first) = lines
        .next()
        .ok_or_else(|| Error::Parse { line: 1, reason: "empty field file".into() })?;
    let header = HeaderMap::parse(first, "field")?;
    let grid = parse_grid(&header)?;
    let params = PauliParams {
        hbar: header.scalar("hbar")?,
        mass: header.scalar("mass")?,
        charge: header.scalar("charge")?,
        light_speed: header.scalar("light_speed")?,
        moment: header.scalar("moment")?,
    };
    let time: f64 = header.scalar("time")?;
    let mut values = Vec::with_capacity(grid.len());
    for (idx, row) in lines {
        let line = idx + 1;
        if row.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = row.split_whitespace().collect();
        if cols.len() != 5 {
            return Err(Error::Parse {
                line,
                reason: format!("expected 5 columns, found {}", cols.len()),
            });
        }
        values.push([
            C::new(parse_real(cols[1], line)?, parse_real(cols[2], line)?),
            C::new(parse_real(cols[3], line)?, parse_real(cols[4], line)?),
        ]);
    }
    if values.len() != grid.len() {
        return Err(Error::Parse {
            line: text.lines().count(),
            reason: format!("expected {} rows, found {}", grid.len(), values.len()),
        });
    }
    SpinorField::new(grid, values, params, time)
}

/// Run metadata shared by every trajectory table.
#[derive(Debug, Clone)]
pub struct TrajectoryMeta<R: Real> {
    pub seed: u64,
    pub grid: Grid<R>,
    pub dt: R,
}

/// Row thinning for large runs.
#[derive(Debug, Clone, Copy)]
pub struct TrajectoryWriteOptions {
    /// Keep every `stride`-th time sample (the final one always included).
    pub stride: usize,
    /// Cap on the number of trajectories written.
    pub max_trajectories: Option<usize>,
}

impl Default for TrajectoryWriteOptions {
    fn default() -> Self {
        Self { stride: 1, max_trajectories: None }
    }
}

fn trajectory_header<R: Real>(meta: &TrajectoryMeta<R>, n: usize) -> String {
    let grid = &meta.grid;
    let mut h = String::from("# trajectories ");
    let _ = write!(h, "seed={} n={n} dims={} ", meta.seed, grid.dims());
    h.push_str("points=");
    for axis in 0..grid.dims() {
        if axis > 0 {
            h.push(',');
        }
        let _ = write!(h, "{}", grid.points(axis));
    }
    h.push(' ');
    push_axis_values(&mut h, "extent", grid, |a| grid.extent(a));
    let _ = write!(h, " dt={}", meta.dt.as_f64());
    h
}

fn kept_rows(len: usize, stride: usize) -> impl Iterator<Item = usize> {
    let stride = stride.max(1);
    (0..len).filter(move |&i| i % stride == 0 || i + 1 == len)
}

/// CSV for position trajectories (`x` only in 1D, `x,y` in 2D).
pub fn format_trajectories<R: Real>(
    meta: &TrajectoryMeta<R>,
    trajectories: &[Trajectory<R>],
    opts: TrajectoryWriteOptions,
) -> String {
    let mut out = trajectory_header(meta, trajectories.len());
    let two_d = meta.grid.dims() == 2;
    out.push('\n');
    out.push_str(if two_d { "id,t,x,y,status\n" } else { "id,t,x,status\n" });
    let cap = opts.max_trajectories.unwrap_or(usize::MAX);
    for (id, t) in trajectories.iter().take(cap).enumerate() {
        for i in kept_rows(t.times.len(), opts.stride) {
            let _ = write!(out, "{id},{},{}", t.times[i].as_f64(), t.points[i][0].as_f64());
            if two_d {
                let _ = write!(out, ",{}", t.points[i][1].as_f64());
            }
            let _ = writeln!(out, ",{}", t.status.label());
        }
    }
    out
}

/// CSV for spin be-able trajectories: adds the initial branch and `s₃(t)`.
pub fn format_spin_trajectories<R: Real>(
    meta: &TrajectoryMeta<R>,
    trajectories: &[SpinTrajectory<R>],
    opts: TrajectoryWriteOptions,
) -> String {
    let mut out = trajectory_header(meta, trajectories.len());
    out.push('\n');
    out.push_str("id,t,x,lambda0,s3,status\n");
    let cap = opts.max_trajectories.unwrap_or(usize::MAX);
    for (id, t) in trajectories.iter().take(cap).enumerate() {
        for i in kept_rows(t.base.times.len(), opts.stride) {
            let _ = writeln!(
                out,
                "{id},{},{},{},{},{}",
                t.base.times[i].as_f64(),
                t.base.points[i][0].as_f64(),
                t.lambda0.as_f64(),
                t.s3[i].as_f64(),
                t.base.status.label()
            );
        }
    }
    out
}

/// CSV for measurement trajectories: joint `(x, y)` rows plus the outcome
/// index (`-` while unclassified).
pub fn format_outcome_trajectories<R: Real>(
    meta: &TrajectoryMeta<R>,
    trajectories: &[Trajectory<R>],
    outcomes: &[Option<usize>],
    opts: TrajectoryWriteOptions,
) -> String {
    let mut out = trajectory_header(meta, trajectories.len());
    out.push('\n');
    out.push_str("id,t,x,y,outcome,status\n");
    let cap = opts.max_trajectories.unwrap_or(usize::MAX);
    for (id, (t, outcome)) in trajectories.iter().zip(outcomes).take(cap).enumerate() {
        let tag = outcome.map_or_else(|| "-".to_string(), |j| j.to_string());
        for i in kept_rows(t.times.len(), opts.stride) {
            let _ = writeln!(
                out,
                "{id},{},{},{},{tag},{}",
                t.times[i].as_f64(),
                t.points[i][0].as_f64(),
                t.points[i][1].as_f64(),
                t.status.label()
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bohm::TrajectoryStatus;
    use crate::field::{gaussian_packet, GaussianSpec};

    #[test]
    fn scalar_field_round_trips_exactly() {
        let grid = Grid::line(64, 12.0).unwrap();
        let psi = gaussian_packet(grid, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.4, 0.8, 1.3))
            .unwrap();
        let text = format_field(&psi);
        let back = parse_field(&text).unwrap();
        assert_eq!(back.grid().points(0), 64);
        assert_eq!(back.time, psi.time);
        assert_eq!(back.mass, psi.mass);
        // Display is shortest-round-trip; only the constructor's
        // re-normalisation (a factor within one ulp of 1) separates the copies.
        for (a, b) in psi.values.iter().zip(&back.values) {
            assert!((a - b).norm() <= 1e-15);
        }
        assert_eq!(text.lines().next(), format_field(&back).lines().next());
    }

    #[test]
    fn spinor_field_round_trips() {
        let grid = Grid::line(64, 12.0).unwrap();
        let params = PauliParams::natural();
        let psi = SpinorField::from_packet(
            grid,
            params,
            GaussianSpec::one_d(0.0, 0.7, 0.5),
            [C::new(0.8, 0.0), C::new(0.0, 0.6)],
        )
        .unwrap();
        let text = format_spinor(&psi);
        let back = parse_spinor(&text).unwrap();
        for (a, b) in psi.values.iter().zip(&back.values) {
            assert!((a[0] - b[0]).norm() <= 1e-15 && (a[1] - b[1]).norm() <= 1e-15);
        }
        assert_eq!(text.lines().next(), format_spinor(&back).lines().next());
    }

    #[test]
    fn malformed_field_files_name_the_line() {
        let err = parse_field("").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));

        let grid = Grid::line(64, 12.0).unwrap();
        let psi = gaussian_packet(grid, 1.0, [1.0, 1.0], GaussianSpec::one_d(0.0, 0.8, 0.0))
            .unwrap();
        let mut text = format_field(&psi);
        text.push_str("0.5 extra\n"); // row 66: wrong arity
        match parse_field(&text).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 66),
            other => panic!("unexpected error {other:?}"),
        }

        let truncated: String =
            format_field(&psi).lines().take(40).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_field(&truncated).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn trajectory_csv_keeps_stride_and_final_row() {
        let grid = Grid::line(32, 8.0).unwrap();
        let meta = TrajectoryMeta { seed: 9, grid, dt: 0.1 };
        let t = Trajectory {
            x0: [0.5, 0.0],
            times: (0..7).map(|i| i as f64 * 0.1).collect(),
            points: (0..7).map(|i| [0.5 + i as f64 * 0.01, 0.0]).collect(),
            status: TrajectoryStatus::Complete,
        };
        let text = format_trajectories(
            &meta,
            &[t],
            TrajectoryWriteOptions { stride: 3, max_trajectories: None },
        );
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows[0], "# trajectories seed=9 n=1 dims=1 points=32 extent=8 dt=0.1");
        assert_eq!(rows[1], "id,t,x,status");
        // indices 0, 3, 6 survive the stride; 6 is also the final row.
        assert_eq!(rows.len(), 2 + 3);
        assert!(rows[2].starts_with("0,0,0.5,"));
        assert!(rows[4].ends_with(",complete"));
    }
}
