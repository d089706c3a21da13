//! Scenario configuration: a strict TOML schema, validated in one pass that
//! collects *every* problem (unknown keys, missing keys, type mismatches,
//! out-of-range values), each tagged with its line number.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use toml_edit::{ImDocument, Item, TableLike};

/// One validation problem, pointing at the offending line.
#[derive(Debug, Clone)]
pub struct ConfigError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Evolve,
    Trajectories,
    Pauli,
    SternGerlach,
    Measure,
    HjCompare,
}

impl Kind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Evolve => "evolve",
            Self::Trajectories => "trajectories",
            Self::Pauli => "pauli",
            Self::SternGerlach => "stern-gerlach",
            Self::Measure => "measure",
            Self::HjCompare => "hj-compare",
        }
    }

    fn from_label(s: &str) -> Option<Self> {
        match s {
            "evolve" => Some(Self::Evolve),
            "trajectories" => Some(Self::Trajectories),
            "pauli" => Some(Self::Pauli),
            "stern-gerlach" => Some(Self::SternGerlach),
            "measure" => Some(Self::Measure),
            "hj-compare" => Some(Self::HjCompare),
            _ => None,
        }
    }

    /// Scenarios that draw a random ensemble must carry a seed.
    pub fn samples_ensemble(self) -> bool {
        !matches!(self, Self::Evolve)
    }

    /// Assertion names this kind understands, with their comparison sense.
    pub fn assertion_names(self) -> &'static [(&'static str, Sense)] {
        match self {
            Self::Evolve => {
                &[("norm_drift", Sense::AtMost), ("energy_drift", Sense::AtMost)]
            }
            Self::Trajectories => &[
                ("norm_drift", Sense::AtMost),
                ("tv_distance", Sense::AtMost),
                ("expectation_excess", Sense::AtMost),
                ("crossings", Sense::AtMost),
            ],
            Self::Pauli => &[
                ("norm_drift", Sense::AtMost),
                ("oracle_error", Sense::AtMost),
                ("ensemble_excess", Sense::AtMost),
            ],
            Self::SternGerlach => &[
                ("norm_drift", Sense::AtMost),
                ("s3_step", Sense::AtMost),
                ("fraction_sigma", Sense::AtMost),
                ("overlap", Sense::AtMost),
                ("separation", Sense::AtLeast),
            ],
            Self::Measure => &[
                ("weight_sigma", Sense::AtMost),
                ("unclassified", Sense::AtMost),
                ("projection_failures", Sense::AtMost),
                ("drift_reclassified", Sense::AtMost),
            ],
            Self::HjCompare => &[
                ("oracle_error", Sense::AtMost),
                ("tv_distance", Sense::AtMost),
            ],
        }
    }
}

/// Whether an assertion passes when measured ≤ bound or measured ≥ bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    AtMost,
    AtLeast,
}

impl Sense {
    pub fn symbol(self) -> &'static str {
        match self {
            Self::AtMost => "<=",
            Self::AtLeast => ">=",
        }
    }

    pub fn holds(self, measured: f64, bound: f64) -> bool {
        match self {
            Self::AtMost => measured <= bound,
            Self::AtLeast => measured >= bound,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    Free,
    Harmonic,
    Linear,
}

#[derive(Debug, Clone)]
pub struct GridBlock {
    /// One entry per axis (1 or 2 axes).
    pub points: Vec<usize>,
    pub extent: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PhysicsBlock {
    pub hbar: f64,
    /// One entry per axis; scalar configs replicate to both.
    pub mass: Vec<f64>,
    pub potential: PotentialKind,
    pub omega: f64,
    pub force: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct PacketBlock {
    pub amplitude: (f64, f64),
    pub center: f64,
    pub sigma: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RunBlock {
    pub duration: f64,
    pub dt: f64,
    /// Snapshot stride in solver steps.
    pub stride: usize,
    /// Ensemble size for sampling scenarios.
    pub samples: usize,
    pub seed: Option<u64>,
    /// Guidance substeps per snapshot window.
    pub substeps: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct OutputBlock {
    /// Write every k-th stored snapshot as a field file (0 = none).
    pub fields: usize,
    /// Cap on trajectories written to CSV (0 = no CSV).
    pub trajectories: usize,
    /// Histogram bins for equivariance checks.
    pub bins: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self { fields: 0, trajectories: 100, bins: 64 }
    }
}

#[derive(Debug, Clone)]
pub struct SpinBlock {
    /// (c₊, c₋) as complex pairs.
    pub coefficients: [(f64, f64); 2],
    pub moment: f64,
    pub charge: f64,
    pub light_speed: f64,
    pub center: f64,
    pub sigma: f64,
    pub momentum: f64,
    /// Uniform field (pauli kind).
    pub magnetic_field: Option<[f64; 3]>,
    /// Linear e₃ gradient (stern-gerlach kind).
    pub gradient: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct MeasureBlock {
    pub coefficients: Vec<(f64, f64)>,
    pub system_centers: Vec<f64>,
    pub system_sigma: f64,
    pub pointer_sigma: f64,
    pub eigenvalues: Vec<f64>,
    pub coupling: f64,
    /// Stored coupling steps (the propagator itself is exact).
    pub snapshots: usize,
    /// Free-drift window after the coupling, as a fraction of its duration
    /// (0 disables the stability check).
    pub drift_fraction: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct HjBlock {
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
}

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub kind: Kind,
    pub name: String,
    pub grid: GridBlock,
    pub physics: PhysicsBlock,
    pub packets: Vec<PacketBlock>,
    pub run: RunBlock,
    pub output: OutputBlock,
    pub asserts: BTreeMap<String, f64>,
    pub spin: Option<SpinBlock>,
    pub measure: Option<MeasureBlock>,
    pub hj: Option<HjBlock>,
}

/// Collects problems against the source text for line lookup.
struct Collector<'t> {
    text: &'t str,
    errors: Vec<ConfigError>,
}

impl<'t> Collector<'t> {
    fn line_of(&self, span: Option<Range<usize>>) -> usize {
        span.map_or(1, |r| self.text[..r.start.min(self.text.len())].matches('\n').count() + 1)
    }

    fn push(&mut self, span: Option<Range<usize>>, message: String) {
        let line = self.line_of(span);
        self.errors.push(ConfigError { line, message });
    }
}

fn item_span(item: &Item) -> Option<Range<usize>> {
    match item {
        Item::Value(v) => v.span(),
        Item::Table(t) => t.span(),
        Item::ArrayOfTables(a) => a.span(),
        Item::None => None,
    }
}

fn table_span(table: &dyn TableLike) -> Option<Range<usize>> {
    table.iter().next().and_then(|(_, item)| item_span(item))
}

/// Typed key extraction from one table, accumulating errors.
struct Fields<'a, 'c, 't> {
    table: Option<&'a dyn TableLike>,
    path: &'a str,
    col: &'c mut Collector<'t>,
}

impl<'a, 'c, 't> Fields<'a, 'c, 't> {
    fn item(&mut self, key: &str, required: bool) -> Option<&'a Item> {
        let table = self.table?;
        match table.get(key) {
            Some(item) => Some(item),
            None => {
                if required {
                    let span = table_span(table);
                    self.col.push(span, format!("`{}` is missing required key `{key}`", self.path));
                }
                None
            }
        }
    }

    fn float(&mut self, key: &str, required: bool) -> Option<f64> {
        let path = self.path;
        let item = self.item(key, required)?;
        match item.as_float().or_else(|| item.as_integer().map(|i| i as f64)) {
            Some(v) if v.is_finite() => Some(v),
            _ => {
                self.col.push(item_span(item), format!("`{path}.{key}` must be a finite number"));
                None
            }
        }
    }

    fn positive(&mut self, key: &str, required: bool) -> Option<f64> {
        let v = self.float(key, required)?;
        if v > 0.0 {
            Some(v)
        } else {
            let path = self.path;
            let span = self.table.and_then(|t| t.get(key)).and_then(item_span);
            self.col.push(span, format!("`{path}.{key}` must be positive, got {v}"));
            None
        }
    }

    fn integer(&mut self, key: &str, required: bool) -> Option<i64> {
        let path = self.path;
        let item = self.item(key, required)?;
        match item.as_integer() {
            Some(v) => Some(v),
            None => {
                self.col.push(item_span(item), format!("`{path}.{key}` must be an integer"));
                None
            }
        }
    }

    fn count(&mut self, key: &str, required: bool) -> Option<usize> {
        let v = self.integer(key, required)?;
        if v >= 0 {
            Some(v as usize)
        } else {
            let path = self.path;
            let span = self.table.and_then(|t| t.get(key)).and_then(item_span);
            self.col.push(span, format!("`{path}.{key}` must be non-negative, got {v}"));
            None
        }
    }

    fn string(&mut self, key: &str, required: bool) -> Option<&'a str> {
        let path = self.path;
        let item = self.item(key, required)?;
        match item.as_str() {
            Some(s) => Some(s),
            None => {
                self.col.push(item_span(item), format!("`{path}.{key}` must be a string"));
                None
            }
        }
    }

    /// A number or an array of numbers; returns 1 or up to `max` values.
    fn float_list(&mut self, key: &str, max: usize, required: bool) -> Option<Vec<f64>> {
        let path = self.path;
        let item = self.item(key, required)?;
        if let Some(arr) = item.as_array() {
            let mut out = Vec::new();
            for v in arr.iter() {
                match v.as_float().or_else(|| v.as_integer().map(|i| i as f64)) {
                    Some(f) if f.is_finite() => out.push(f),
                    _ => {
                        self.col.push(v.span(), format!("`{path}.{key}` entries must be numbers"));
                        return None;
                    }
                }
            }
            if out.is_empty() || out.len() > max {
                self.col.push(
                    item_span(item),
                    format!("`{path}.{key}` wants 1..={max} entries, got {}", out.len()),
                );
                return None;
            }
            Some(out)
        } else {
            match item.as_float().or_else(|| item.as_integer().map(|i| i as f64)) {
                Some(f) if f.is_finite() => Some(vec![f]),
                _ => {
                    self.col.push(
                        item_span(item),
                        format!("`{path}.{key}` must be a number or array of numbers"),
                    );
                    None
                }
            }
        }
    }

    /// A complex number as a `[re, im]` pair.
    fn complex(&mut self, key: &str, required: bool) -> Option<(f64, f64)> {
        let list = self.float_list(key, 2, required)?;
        if list.len() == 2 {
            Some((list[0], list[1]))
        } else {
            let path = self.path;
            let span = self.table.and_then(|t| t.get(key)).and_then(item_span);
            self.col.push(span, format!("`{path}.{key}` must be a [re, im] pair"));
            None
        }
    }

    fn reject_unknown(&mut self, allowed: &[&str]) {
        let Some(table) = self.table else { return };
        let path = self.path;
        let unknown: Vec<(String, Option<Range<usize>>)> = table
            .iter()
            .filter(|(k, _)| !allowed.contains(k))
            .map(|(k, item)| (k.to_string(), item_span(item)))
            .collect();
        for (key, span) in unknown {
            self.col.push(span, format!("unknown key `{path}.{key}`"));
        }
    }
}

fn subtable<'a>(
    root: &'a dyn TableLike,
    key: &str,
    required: bool,
    col: &mut Collector<'_>,
) -> Option<&'a dyn TableLike> {
    match root.get(key) {
        Some(item) => match item.as_table_like() {
            Some(t) => Some(t),
            None => {
                col.push(item_span(item), format!("`{key}` must be a table"));
                None
            }
        },
        None => {
            if required {
                col.push(None, format!("missing required table `[{key}]`"));
            }
            None
        }
    }
}

/// Parse and fully validate a scenario file. On failure every detected
/// problem is returned, not just the first.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, Vec<ConfigError>> {
    let doc: ImDocument<&str> = match ImDocument::parse(text) {
        Ok(doc) => doc,
        Err(err) => {
            let line = err
                .span()
                .map_or(1, |r| text[..r.start.min(text.len())].matches('\n').count() + 1);
            return Err(vec![ConfigError { line, message: err.to_string() }]);
        }
    };
    let mut col = Collector { text, errors: Vec::new() };
    let root: &dyn TableLike = doc.as_table();

    {
        let mut top = Fields { table: Some(root), path: "", col: &mut col };
        top.reject_unknown(&[
            "kind", "name", "grid", "physics", "state", "run", "output", "assert", "spin",
            "measure", "hj",
        ]);
    }

    let kind = {
        let mut top = Fields { table: Some(root), path: "config", col: &mut col };
        top.string("kind", true).and_then(|s| {
            let parsed = Kind::from_label(s);
            if parsed.is_none() {
                let span = root.get("kind").and_then(item_span);
                top.col.push(
                    span,
                    format!(
                        "unknown kind `{s}` (expected evolve | trajectories | pauli | \
                         stern-gerlach | measure | hj-compare)"
                    ),
                );
            }
            parsed
        })
    };
    let name = {
        let mut top = Fields { table: Some(root), path: "config", col: &mut col };
        top.string("name", true).map(str::to_string)
    };

    // [grid]
    let grid_table = subtable(root, "grid", true, &mut col);
    let grid = {
        let mut g = Fields { table: grid_table, path: "grid", col: &mut col };
        g.reject_unknown(&["points", "extent"]);
        let points = g.item("points", true).and_then(|item| {
            let to_count = |v: i64, span: Option<Range<usize>>, col: &mut Collector<'_>| {
                if v >= 16 {
                    Some(v as usize)
                } else {
                    col.push(span, format!("grid.points entries must be >= 16, got {v}"));
                    None
                }
            };
            if let Some(arr) = item.as_array() {
                let mut out = Vec::new();
                for v in arr.iter() {
                    match v.as_integer() {
                        Some(i) => out.push(to_count(i, v.span(), g.col)?),
                        None => {
                            g.col.push(v.span(), "grid.points entries must be integers".into());
                            return None;
                        }
                    }
                }
                if out.is_empty() || out.len() > 2 {
                    g.col.push(item_span(item), "grid.points wants 1 or 2 entries".into());
                    return None;
                }
                Some(out)
            } else {
                item.as_integer()
                    .or_else(|| {
                        g.col.push(item_span(item), "grid.points must be integer(s)".into());
                        None
                    })
                    .and_then(|i| to_count(i, item_span(item), g.col).map(|c| vec![c]))
            }
        });
        let extent = g.float_list("extent", 2, true).and_then(|e| {
            if e.iter().all(|&x| x > 0.0) {
                Some(e)
            } else {
                let span = grid_table.and_then(|t| t.get("extent")).and_then(item_span);
                g.col.push(span, "grid.extent entries must be positive".into());
                None
            }
        });
        match (points, extent) {
            (Some(p), Some(e)) if p.len() == e.len() => Some(GridBlock { points: p, extent: e }),
            (Some(p), Some(e)) => {
                let span = grid_table.and_then(table_span);
                col.push(
                    span,
                    format!("grid.points has {} entries but grid.extent has {}", p.len(), e.len()),
                );
                None
            }
            _ => None,
        }
    };

    // [physics]
    let physics_table = subtable(root, "physics", true, &mut col);
    let physics = {
        let mut p = Fields { table: physics_table, path: "physics", col: &mut col };
        p.reject_unknown(&["hbar", "mass", "potential", "omega", "force"]);
        let hbar = p.positive("hbar", true);
        let mass = p.float_list("mass", 2, true).and_then(|m| {
            if m.iter().all(|&x| x > 0.0) {
                Some(m)
            } else {
                let span = physics_table.and_then(|t| t.get("mass")).and_then(item_span);
                p.col.push(span, "physics.mass entries must be positive".into());
                None
            }
        });
        let potential = match p.string("potential", false) {
            None => Some(PotentialKind::Free),
            Some("free") => Some(PotentialKind::Free),
            Some("harmonic") => Some(PotentialKind::Harmonic),
            Some("linear") => Some(PotentialKind::Linear),
            Some(other) => {
                let span = physics_table.and_then(|t| t.get("potential")).and_then(item_span);
                p.col.push(
                    span,
                    format!("unknown potential `{other}` (expected free | harmonic | linear)"),
                );
                None
            }
        };
        let omega = if potential == Some(PotentialKind::Harmonic) {
            p.positive("omega", true)
        } else {
            p.float("omega", false).or(Some(0.0))
        };
        let force = p.float("force", false).or(Some(0.0));
        match (hbar, mass, potential, omega, force) {
            (Some(hbar), Some(mass), Some(potential), Some(omega), Some(force)) => {
                Some(PhysicsBlock { hbar, mass, potential, omega, force })
            }
            _ => None,
        }
    };

    // [[state.packets]]
    let needs_packets = matches!(kind, Some(Kind::Evolve | Kind::Trajectories | Kind::HjCompare));
    let state_table = subtable(root, "state", needs_packets, &mut col);
    let packets = state_table.map(|state| {
        {
            let mut s = Fields { table: Some(state), path: "state", col: &mut col };
            s.reject_unknown(&["packets"]);
        }
        let mut out = Vec::new();
        match state.get("packets") {
            Some(item) => {
                let tables: Vec<&dyn TableLike> =
                    if let Some(aot) = item.as_array_of_tables() {
                        aot.iter().map(|t| t as &dyn TableLike).collect()
                    } else if let Some(arr) = item.as_array() {
                        arr.iter().filter_map(|v| v.as_inline_table())
                            .map(|t| t as &dyn TableLike)
                            .collect()
                    } else {
                        col.push(item_span(item), "state.packets must be an array of tables".into());
                        Vec::new()
                    };
                for table in tables {
                    let mut f = Fields { table: Some(table), path: "state.packets", col: &mut col };
                    f.reject_unknown(&["amplitude", "center", "sigma", "momentum"]);
                    let amplitude = f.complex("amplitude", false).unwrap_or((1.0, 0.0));
                    let center = f.float("center", true);
                    let sigma = f.positive("sigma", true);
                    let momentum = f.float("momentum", false).unwrap_or(0.0);
                    if let (Some(center), Some(sigma)) = (center, sigma) {
                        out.push(PacketBlock { amplitude, center, sigma, momentum });
                    }
                }
            }
            None => col.push(table_span(state), "`state` is missing `packets`".into()),
        }
        out
    });

    // [run]
    let run_table = subtable(root, "run", true, &mut col);
    let run = {
        let mut r = Fields { table: run_table, path: "run", col: &mut col };
        r.reject_unknown(&["duration", "dt", "stride", "samples", "seed", "substeps"]);
        let duration = r.positive("duration", true);
        let dt = r.positive("dt", true);
        let stride = r.count("stride", false).unwrap_or(1).max(1);
        let sampling = kind.is_some_and(Kind::samples_ensemble);
        let samples_given = r.count("samples", sampling);
        let samples = samples_given.unwrap_or(0);
        let seed = r.integer("seed", sampling).map(|s| s as u64);
        let substeps = r.count("substeps", false).unwrap_or(2).max(1);
        if sampling && samples_given == Some(0) {
            let span = run_table.and_then(|t| t.get("samples")).and_then(item_span);
            col.push(span, "sampling scenarios need run.samples > 0".into());
        }
        match (duration, dt) {
            (Some(duration), Some(dt)) => {
                let steps = duration / dt;
                if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
                    let span = run_table.and_then(|t| t.get("dt")).and_then(item_span);
                    col.push(
                        span,
                        format!("run.duration must be an integer multiple of run.dt (ratio {steps})"),
                    );
                    None
                } else {
                    let steps = steps.round() as usize;
                    if steps % stride != 0 {
                        let span = run_table.and_then(|t| t.get("stride")).and_then(item_span);
                        col.push(
                            span,
                            format!("run.stride must divide the {steps} solver steps"),
                        );
                        None
                    } else {
                        Some(RunBlock { duration, dt, stride, samples, seed, substeps })
                    }
                }
            }
            _ => None,
        }
    };

    // [output]
    let output_table = subtable(root, "output", false, &mut col);
    let output = {
        let mut o = Fields { table: output_table, path: "output", col: &mut col };
        o.reject_unknown(&["fields", "trajectories", "bins"]);
        let defaults = OutputBlock::default();
        OutputBlock {
            fields: o.count("fields", false).unwrap_or(defaults.fields),
            trajectories: o.count("trajectories", false).unwrap_or(defaults.trajectories),
            bins: o.count("bins", false).unwrap_or(defaults.bins).max(2),
        }
    };

    // [assert]
    let assert_table = subtable(root, "assert", false, &mut col);
    let mut asserts = BTreeMap::new();
    if let (Some(table), Some(kind)) = (assert_table, kind) {
        let legal: Vec<&str> = kind.assertion_names().iter().map(|(n, _)| *n).collect();
        let entries: Vec<String> = table.iter().map(|(k, _)| k.to_string()).collect();
        for key in entries {
            if !legal.contains(&key.as_str()) {
                let span = table.get(&key).and_then(item_span);
                col.push(
                    span,
                    format!(
                        "assertion `{key}` is not defined for kind `{}` (expected one of {})",
                        kind.label(),
                        legal.join(", ")
                    ),
                );
                continue;
            }
            let mut a = Fields { table: Some(table), path: "assert", col: &mut col };
            if let Some(v) = a.float(&key, true) {
                asserts.insert(key, v);
            }
        }
    }

    // [spin]
    let needs_spin = matches!(kind, Some(Kind::Pauli | Kind::SternGerlach));
    let spin_table = subtable(root, "spin", needs_spin, &mut col);
    let spin = spin_table.and_then(|table| {
        let mut s = Fields { table: Some(table), path: "spin", col: &mut col };
        s.reject_unknown(&[
            "coefficients", "moment", "charge", "light_speed", "center", "sigma", "momentum",
            "magnetic_field", "gradient",
        ]);
        let coefficients = s.item("coefficients", true).and_then(|item| {
            let arr = item.as_array()?;
            let pairs: Vec<(f64, f64)> = arr
                .iter()
                .filter_map(|v| {
                    let inner = v.as_array()?;
                    let re = inner.get(0)?.as_float().or_else(|| inner.get(0)?.as_integer().map(|i| i as f64))?;
                    let im = inner.get(1)?.as_float().or_else(|| inner.get(1)?.as_integer().map(|i| i as f64))?;
                    Some((re, im))
                })
                .collect();
            if pairs.len() == 2 {
                Some([pairs[0], pairs[1]])
            } else {
                None
            }
        });
        if coefficients.is_none() {
            let span = table.get("coefficients").and_then(item_span);
            col.push(span, "spin.coefficients must be two [re, im] pairs".into());
        }
        let mut s = Fields { table: Some(table), path: "spin", col: &mut col };
        let moment = s.float("moment", false).unwrap_or(1.0);
        let charge = s.float("charge", false).unwrap_or(0.0);
        let light_speed = s.positive("light_speed", false).unwrap_or(1.0);
        let center = s.float("center", false).unwrap_or(0.0);
        let sigma = s.positive("sigma", true);
        let momentum = s.float("momentum", false).unwrap_or(0.0);
        let magnetic_field = s.float_list("magnetic_field", 3, kind == Some(Kind::Pauli)).and_then(
            |b| {
                if b.len() == 3 {
                    Some([b[0], b[1], b[2]])
                } else {
                    let span = table.get("magnetic_field").and_then(item_span);
                    s.col.push(span, "spin.magnetic_field must have 3 components".into());
                    None
                }
            },
        );
        let gradient = s.float("gradient", kind == Some(Kind::SternGerlach));
        Some(SpinBlock {
            coefficients: coefficients?,
            moment,
            charge,
            light_speed,
            center,
            sigma: sigma?,
            momentum,
            magnetic_field,
            gradient,
        })
    });

    // [measure]
    let measure_table = subtable(root, "measure", kind == Some(Kind::Measure), &mut col);
    let measure = measure_table.and_then(|table| {
        let mut m = Fields { table: Some(table), path: "measure", col: &mut col };
        m.reject_unknown(&[
            "coefficients", "system_centers", "system_sigma", "pointer_sigma", "eigenvalues",
            "coupling", "snapshots", "drift_fraction",
        ]);
        let coefficients = m.item("coefficients", true).and_then(|item| {
            let arr = item.as_array()?;
            let pairs: Vec<(f64, f64)> = arr
                .iter()
                .filter_map(|v| {
                    let inner = v.as_array()?;
                    let re = inner.get(0)?.as_float().or_else(|| inner.get(0)?.as_integer().map(|i| i as f64))?;
                    let im = inner.get(1)?.as_float().or_else(|| inner.get(1)?.as_integer().map(|i| i as f64))?;
                    Some((re, im))
                })
                .collect();
            (!pairs.is_empty()).then_some(pairs)
        });
        if coefficients.is_none() {
            let span = table.get("coefficients").and_then(item_span);
            col.push(span, "measure.coefficients must be a list of [re, im] pairs".into());
        }
        let mut m = Fields { table: Some(table), path: "measure", col: &mut col };
        let system_centers = m.float_list("system_centers", 3, true);
        let system_sigma = m.positive("system_sigma", true);
        let pointer_sigma = m.positive("pointer_sigma", true);
        let eigenvalues = m.float_list("eigenvalues", 3, true);
        let coupling = m.float("coupling", true);
        let snapshots = m.count("snapshots", false).unwrap_or(8).max(1);
        let drift_fraction = m.float("drift_fraction", false).unwrap_or(0.0);
        Some(MeasureBlock {
            coefficients: coefficients?,
            system_centers: system_centers?,
            system_sigma: system_sigma?,
            pointer_sigma: pointer_sigma?,
            eigenvalues: eigenvalues?,
            coupling: coupling?,
            snapshots,
            drift_fraction,
        })
    });

    // [hj]
    let hj_table = subtable(root, "hj", kind == Some(Kind::HjCompare), &mut col);
    let hj = hj_table.and_then(|table| {
        let mut h = Fields { table: Some(table), path: "hj", col: &mut col };
        h.reject_unknown(&["a0", "b0", "c0"]);
        let a0 = h.float("a0", true);
        let b0 = h.float("b0", false).unwrap_or(0.0);
        let c0 = h.float("c0", false).unwrap_or(0.0);
        Some(HjBlock { a0: a0?, b0, c0 })
    });

    // Cross-checks that need several blocks at once.
    if let (Some(kind), Some(grid)) = (kind, grid.as_ref()) {
        let want_axes = if kind == Kind::Measure { 2 } else { 1 };
        if grid.points.len() != want_axes {
            col.push(
                None,
                format!(
                    "kind `{}` needs a {want_axes}-axis grid, got {} axes",
                    kind.label(),
                    grid.points.len()
                ),
            );
        }
    }
    if let (Some(m), Some(_)) = (measure.as_ref(), kind.filter(|&k| k == Kind::Measure)) {
        let j = m.coefficients.len();
        if m.system_centers.len() != j || m.eigenvalues.len() != j {
            col.push(
                None,
                format!(
                    "measure blocks disagree on the outcome count: {} coefficients, {} centers, {} eigenvalues",
                    j,
                    m.system_centers.len(),
                    m.eigenvalues.len()
                ),
            );
        }
    }

    if !col.errors.is_empty() {
        col.errors.sort_by_key(|e| e.line);
        return Err(col.errors);
    }
    let (Some(kind), Some(name), Some(grid), Some(physics), Some(run)) =
        (kind, name, grid, physics, run)
    else {
        return Err(vec![ConfigError { line: 1, message: "incomplete configuration".into() }]);
    };
    Ok(ScenarioConfig {
        kind,
        name,
        grid,
        physics,
        packets: packets.unwrap_or_default(),
        run,
        output,
        asserts,
        spin,
        measure,
        hj,
    })
}
