//! Scenario runner behind the `reeblab` binary: TOML scenario files, one
//! command per invocation, structured JSON results and CSV plot data.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::cycles::{fried_check_class, rotation_number, FriedConfig};
use crate::error::ReebError;
use crate::flow::Framing;
use crate::geometry::{Axis, StarShapedSystem, SurfacePoint, Tolerances, Vec4};
use crate::knots::{gauss_linking_integral, linking_computation, self_linking, ClosedCurve, LinkingClass};
use crate::orbits::{find_periodic_orbits, nondegenerate_up_to, precise_control, OrbitSearchConfig, PeriodicOrbit};
use crate::sections::{
    area_preservation, build_tilted_page, page_area, return_orbit, return_time_bounds, transversality_scan,
    write_return_orbit_csv, ChartPoint,
};
use crate::spectral::{
    build_operator, convexity_check, cz_of_iterate, default_window, richardson_check, spectrum, ConvexityConfig,
};

/// Reeb dynamics on star-shaped hypersurfaces: periodic orbits,
/// Conley-Zehnder indices, linking, rotation numbers and surfaces of section.
#[derive(Debug, Parser)]
#[command(name = "reeblab", version)]
pub struct Args {
    /// Computation to run.
    pub command: Command,
    /// Scenario file (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `[output] dir` (default `reeblab-out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Random seed; overrides `seed` in the scenario.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Orbits,
    Spectrum,
    Cz,
    Convexity,
    Linking,
    Rotation,
    Fried,
    Section,
    ReturnMap,
    Area,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Orbits => "orbits",
            Command::Spectrum => "spectrum",
            Command::Cz => "cz",
            Command::Convexity => "convexity",
            Command::Linking => "linking",
            Command::Rotation => "rotation",
            Command::Fried => "fried",
            Command::Section => "section",
            Command::ReturnMap => "return-map",
            Command::Area => "area",
        }
    }

    fn samples(self) -> bool {
        matches!(self, Command::Orbits | Command::Convexity | Command::Fried | Command::Area)
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Malformed or inconsistent scenario; exit status 2.
    Config(String),
    /// Numerical failure; exit status 1.
    Compute(ReebError),
    /// Output could not be written; exit status 1.
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Compute(_) | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Compute(e) => write!(f, "computation failed: {e}"),
            CliError::Io(m) => write!(f, "output error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ReebError> for CliError {
    fn from(e: ReebError) -> Self {
        CliError::Compute(e)
    }
}

fn io_err(path: &Path, e: impl fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------- scenario

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// Optional; must match the command given on the command line.
    pub command: Option<String>,
    pub system: SystemSpec,
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerances: ToleranceOverrides,
    #[serde(default)]
    pub output: OutputSpec,
    pub orbits: Option<OrbitsParams>,
    pub spectrum: Option<SpectrumParams>,
    pub cz: Option<CzParams>,
    pub convexity: Option<ConvexityParams>,
    pub linking: Option<LinkingParams>,
    pub rotation: Option<RotationParams>,
    pub fried: Option<FriedParams>,
    pub section: Option<SectionParams>,
    pub return_map: Option<ReturnMapParams>,
    pub area: Option<AreaParams>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    /// `split`, `hopf` or `split_perturbed`.
    pub hamiltonian: String,
    #[serde(default = "one")]
    pub a: f64,
    #[serde(default = "one")]
    pub b: f64,
    #[serde(default)]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceOverrides {
    pub surface: Option<f64>,
    pub frame: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    pub dir: Option<PathBuf>,
}

/// An orbit by name (`gamma1`, `gamma2` on split systems) or by a marked
/// point and primitive period.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum OrbitSpec {
    Named(String),
    Explicit(ExplicitOrbit),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitOrbit {
    pub point: [f64; 4],
    pub period: f64,
    pub id: Option<String>,
}

/// A weighted, oriented link component.
#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum LinkEntry {
    Weighted(WeightedOrbit),
    Plain(OrbitSpec),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightedOrbit {
    pub orbit: OrbitSpec,
    #[serde(default = "one_i")]
    pub coefficient: i64,
    #[serde(default = "one_i")]
    pub orientation: i64,
}

fn one_i() -> i64 {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitsParams {
    pub action_cap: f64,
    #[serde(default)]
    pub search: OrbitSearchConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumParams {
    pub orbit: OrbitSpec,
    #[serde(default = "one_u")]
    pub k: u32,
    #[serde(default = "global")]
    pub framing: Framing,
    #[serde(default = "default_n")]
    pub n: usize,
    pub window: Option<[f64; 2]>,
    #[serde(default)]
    pub delta: f64,
    /// Also compare with the `2N` discretization.
    #[serde(default)]
    pub richardson: bool,
}

fn one_u() -> u32 {
    1
}

fn global() -> Framing {
    Framing::Global
}

fn default_n() -> usize {
    512
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CzParams {
    pub orbit: OrbitSpec,
    pub ks: Vec<u32>,
    #[serde(default = "global")]
    pub framing: Framing,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub delta: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvexityParams {
    pub action_cap: f64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub strict: bool,
    #[serde(default)]
    pub search: OrbitSearchConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkingParams {
    #[serde(default)]
    pub orbits: Vec<OrbitSpec>,
    /// Closed curves as CSV point lists, paths relative to the scenario.
    #[serde(default)]
    pub curve_files: Vec<PathBuf>,
    /// Cross-check every pair with the Gauss integral.
    #[serde(default = "yes")]
    pub gauss: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationParams {
    pub link: Vec<LinkEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FriedParams {
    pub link: Vec<LinkEntry>,
    pub samples: Option<usize>,
    pub horizon: Option<f64>,
    pub tube_excl: Option<f64>,
    pub rho_tol: Option<f64>,
    pub mu_tol: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionParams {
    pub binding: Axis,
    #[serde(default)]
    pub theta0: f64,
    #[serde(default)]
    pub tilt: f64,
    #[serde(default = "eight")]
    pub n_rho: usize,
    #[serde(default = "eight")]
    pub n_phi: usize,
}

fn eight() -> usize {
    8
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReturnMapParams {
    pub binding: Axis,
    #[serde(default)]
    pub theta0: f64,
    /// `(ρ, φ)` of the first point.
    pub start: [f64; 2],
    #[serde(default = "hundred")]
    pub iterates: usize,
}

fn hundred() -> usize {
    100
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaParams {
    pub binding: Axis,
    #[serde(default)]
    pub theta0: f64,
    /// Random chart rectangles checked for area preservation.
    #[serde(default = "ten")]
    pub rectangles: usize,
}

fn ten() -> usize {
    10
}

/// Parses a scenario, reporting TOML errors with line and field.
pub fn parse_scenario(text: &str) -> Result<Scenario, CliError> {
    toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
}

fn build_system(spec: &SystemSpec, tol: &ToleranceOverrides) -> Result<StarShapedSystem, CliError> {
    let mut sys = StarShapedSystem::from_registry(&spec.hamiltonian, spec.a, spec.b, spec.epsilon)
        .map_err(|e| CliError::Config(format!("[system]: {e}")))?;
    let defaults = Tolerances::default();
    sys.tol = Tolerances {
        surface: tol.surface.unwrap_or(defaults.surface),
        frame: tol.frame.unwrap_or(defaults.frame),
    };
    Ok(sys)
}

fn resolve_orbit(sys: &StarShapedSystem, spec: &OrbitSpec, field: &str) -> Result<PeriodicOrbit, CliError> {
    match spec {
        OrbitSpec::Named(name) => {
            let axis = match name.as_str() {
                "gamma1" => Axis::First,
                "gamma2" => Axis::Second,
                other => {
                    return Err(CliError::Config(format!(
                        "{field}: unknown orbit '{other}' (use gamma1, gamma2 or {{ point, period }})"
                    )))
                }
            };
            if sys.split_params().is_none() {
                return Err(CliError::Config(format!(
                    "{field}: '{name}' names an axis circle and needs a split system"
                )));
            }
            Ok(PeriodicOrbit::axis_orbit(sys, axis)?)
        }
        OrbitSpec::Explicit(e) => {
            let z = SurfacePoint::project(sys, Vec4::from(e.point))?;
            let mut orbit = PeriodicOrbit::verified(sys, z, e.period, &precise_control())?;
            if let Some(id) = &e.id {
                orbit.id = id.clone();
            }
            Ok(orbit)
        }
    }
}

fn resolve_link(sys: &StarShapedSystem, link: &[LinkEntry], field: &str) -> Result<LinkingClass, CliError> {
    if link.is_empty() {
        return Err(CliError::Config(format!("{field}: the link is empty")));
    }
    let mut spec = Vec::new();
    for (i, entry) in link.iter().enumerate() {
        let (orbit, c, s) = match entry {
            LinkEntry::Plain(o) => (o, 1, 1),
            LinkEntry::Weighted(w) => (&w.orbit, w.coefficient, w.orientation),
        };
        if s.abs() != 1 {
            return Err(CliError::Config(format!("{field}[{i}]: orientation must be 1 or -1")));
        }
        let mut orbit = resolve_orbit(sys, orbit, &format!("{field}[{i}]"))?;
        if spec.iter().any(|(o, _, _): &(PeriodicOrbit, i64, i64)| o.id == orbit.id) {
            orbit.id = format!("{}#{i}", orbit.id);
        }
        spec.push((orbit, c, s));
    }
    Ok(LinkingClass::with_coefficients(sys, &spec)?)
}

fn required<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("missing [{name}] table for this command")))
}

// ---------------------------------------------------------- measured output

/// Tolerance and diagnostic attached to a numeric field.
type Annotation = (f64, String);

/// Wraps every number of `v` as `{value, tolerance, diagnostic}`, choosing
/// the annotation by the name of the enclosing field.
fn measured(v: Value, key: &str, annotate: &dyn Fn(&str) -> Annotation) -> Value {
    match v {
        Value::Object(map) => Value::Object(
            map.into_iter()
                .map(|(k, x)| {
                    let x = measured(x, &k, annotate);
                    (k, x)
                })
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.into_iter().map(|x| measured(x, key, annotate)).collect()),
        Value::Number(n) => {
            let (tolerance, diagnostic) = if n.is_f64() {
                annotate(key)
            } else {
                (0.0, "exact integer".to_string())
            };
            json!({ "value": n, "tolerance": tolerance, "diagnostic": diagnostic })
        }
        other => other,
    }
}

fn input(what: &str) -> Annotation {
    (0.0, format!("input: {what}"))
}

/// Annotations shared by all commands.
fn common_annotation(key: &str) -> Annotation {
    let a = |t: f64, d: &str| (t, d.to_string());
    match key {
        "a" | "b" | "epsilon" | "action_cap" | "theta0" | "tilt" | "delta" | "window" | "horizon" | "tube_excl"
        | "rho_tol" | "mu_tol" | "scan_threshold" | "dedup_tol" | "orbit_tol" | "segment_time" => input(key),
        "z" => a(1e-9, "point of the hypersurface; orbit closure verified at tol 1e-9"),
        "t0" | "period" => a(1e-9, "primitive period; closure verified at tol 1e-9"),
        "monodromy" => a(1e-8, "linearized flow in the global frame, RKF7(8) at tol 1e-12"),
        "closure_error" => a(1e-9, "|φ^T0(x0) − x0|; must not exceed the orbit tolerance"),
        "eigen_gap" => a(1e-8, "distance of the monodromy eigenvalues from 1"),
        "nu" => a(1e-6, "Galerkin eigenvalue; N vs 2N agreement"),
        "residual" => a(1e-8, "residual of the computed object; reported as is"),
        "min_norm" => a(0.0, "minimum eigensection norm on the grid; must be positive"),
        "gap" | "spectral_gap" => a(1e-6, "distance from δ to the nearest eigenvalue; within 1e-6 counts as ≥ δ"),
        "max_difference" => a(1e-6, "largest eigenvalue change from N to 2N"),
        "action" => a(1e-9, "action k·T0"),
        _ => a(0.0, "reported as computed"),
    }
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("result types serialize")
}

/// Result of one command: structured record plus plot data.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub command: Command,
    pub record: Value,
    /// `(file name, contents)`.
    pub csv: Vec<(String, String)>,
    pub summary: String,
}

impl RunOutput {
    /// Pretty JSON with a trailing newline.
    pub fn json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.record).expect("json");
        s.push('\n');
        s
    }
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> Result<(), csv::Error>) -> Result<String, CliError> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(|e| CliError::Io(e.to_string()))?;
    Ok(String::from_utf8(buf).expect("csv is utf-8"))
}

fn record(command: Command, scenario: &Scenario, seed: Option<u64>, result: Value) -> Value {
    let mut m = Map::new();
    m.insert("command".into(), json!(command.name()));
    let system = json!({
        "hamiltonian": scenario.system.hamiltonian,
        "a": scenario.system.a,
        "b": scenario.system.b,
        "epsilon": scenario.system.epsilon,
    });
    m.insert("system".into(), measured(system, "", &common_annotation));
    m.insert(
        "seed".into(),
        seed.map_or(Value::Null, |s| measured(json!(s), "seed", &common_annotation)),
    );
    m.insert("result".into(), result);
    Value::Object(m)
}

// -------------------------------------------------------------- commands

/// Runs `command` on a parsed scenario. `base` resolves relative paths.
pub fn run_scenario(command: Command, scenario: &Scenario, seed: Option<u64>, base: &Path) -> Result<RunOutput, CliError> {
    if let Some(c) = &scenario.command {
        if c != command.name() {
            return Err(CliError::Config(format!(
                "scenario is for command '{c}' but '{}' was requested",
                command.name()
            )));
        }
    }
    let seed = seed.or(scenario.seed);
    if command.samples() && seed.is_none() {
        return Err(CliError::Config(format!(
            "command '{}' samples randomly and needs a seed (scenario `seed` or --seed)",
            command.name()
        )));
    }
    let sys = build_system(&scenario.system, &scenario.tolerances)?;
    let (result, csv, summary) = match command {
        Command::Orbits => run_orbits(&sys, required(&scenario.orbits, "orbits")?, seed.unwrap_or(0))?,
        Command::Spectrum => run_spectrum(&sys, required(&scenario.spectrum, "spectrum")?)?,
        Command::Cz => run_cz(&sys, required(&scenario.cz, "cz")?)?,
        Command::Convexity => run_convexity(&sys, required(&scenario.convexity, "convexity")?, seed.unwrap_or(0))?,
        Command::Linking => run_linking(&sys, required(&scenario.linking, "linking")?, base)?,
        Command::Rotation => run_rotation(&sys, required(&scenario.rotation, "rotation")?)?,
        Command::Fried => run_fried(&sys, required(&scenario.fried, "fried")?, seed.unwrap_or(0))?,
        Command::Section => run_section(&sys, required(&scenario.section, "section")?)?,
        Command::ReturnMap => run_return_map(&sys, required(&scenario.return_map, "return_map")?)?,
        Command::Area => run_area(&sys, required(&scenario.area, "area")?, seed.unwrap_or(0))?,
    };
    Ok(RunOutput {
        command,
        record: record(command, scenario, seed, result),
        csv,
        summary,
    })
}

type CommandResult = Result<(Value, Vec<(String, String)>, String), CliError>;

fn run_orbits(sys: &StarShapedSystem, p: &OrbitsParams, seed: u64) -> CommandResult {
    let cfg = OrbitSearchConfig { seed, ..p.search.clone() };
    let search = find_periodic_orbits(sys, p.action_cap, &cfg)?;
    let nondegeneracy = search
        .orbits
        .iter()
        .map(|o| Ok(json!({ "orbit_id": o.id, "report": to_value(&nondegenerate_up_to(sys, o, p.action_cap, 1e-6)?) })))
        .collect::<Result<Vec<Value>, CliError>>()?;
    let value = measured(
        json!({ "search": to_value(&search), "nondegeneracy": nondegeneracy }),
        "",
        &common_annotation,
    );
    let mut rows = String::from("id,t0,x0,y0,x1,y1\n");
    for o in &search.orbits {
        let z = o.marked_point.z;
        rows.push_str(&format!("{},{},{},{},{},{}\n", o.id, o.t0, z[0], z[1], z[2], z[3]));
    }
    let summary = format!(
        "{} primitive orbit(s) with T0 ≤ {}{}",
        search.orbits.len(),
        p.action_cap,
        if search.degenerate_family { " (degenerate family)" } else { "" }
    );
    Ok((value, vec![("orbits.csv".into(), rows)], summary))
}

fn spectrum_rows(spec: &crate::spectral::AsymptoticSpectrum) -> String {
    let mut entries: Vec<(f64, i64)> = spec.entries.iter().map(|e| (e.nu, e.wind)).collect();
    entries.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out = String::from("nu,wind\n");
    for (nu, w) in entries {
        out.push_str(&format!("{nu},{w}\n"));
    }
    out
}

fn run_spectrum(sys: &StarShapedSystem, p: &SpectrumParams) -> CommandResult {
    let orbit = resolve_orbit(sys, &p.orbit, "spectrum.orbit")?;
    let window = p.window.unwrap_or_else(|| default_window(p.delta));
    let op = build_operator(sys, &orbit, p.k, p.framing, p.n)?;
    let spec = spectrum(&op, window)?;
    spec.check_structure()?;
    let richardson = if p.richardson {
        to_value(&richardson_check(sys, &orbit, p.k, p.framing, p.n, window)?)
    } else {
        Value::Null
    };
    let entries: Vec<Value> = spec
        .entries
        .iter()
        .map(|e| json!({ "nu": e.nu, "wind": e.wind, "residual": e.residual, "min_norm": e.min_norm }))
        .collect();
    let value = measured(
        json!({
            "orbit_id": orbit.id,
            "k": p.k,
            "framing": to_value(&p.framing),
            "n": p.n,
            "window": spec.resolved_window,
            "operator_symmetry_defect": op.symmetry_defect,
            "entries": entries,
            "richardson": richardson,
        }),
        "",
        &|k| match k {
            "operator_symmetry_defect" => (1e-5, "coefficient symmetry defect; must be below 1e-5".into()),
            _ => common_annotation(k),
        },
    );
    let summary = format!("{} eigenvalues of {} (k = {}) in the window", spec.entries.len(), orbit.id, p.k);
    Ok((value, vec![("spectrum.csv".into(), spectrum_rows(&spec))], summary))
}

fn run_cz(sys: &StarShapedSystem, p: &CzParams) -> CommandResult {
    if p.ks.is_empty() {
        return Err(CliError::Config("cz.ks: list at least one iterate".into()));
    }
    let orbit = resolve_orbit(sys, &p.orbit, "cz.orbit")?;
    let mut rows = Vec::new();
    let mut csv = String::from("k,cz,alpha_lt,p,gap\n");
    for &k in &p.ks {
        let (_, cz) = cz_of_iterate(sys, &orbit, k, p.framing, p.n, p.delta)?;
        csv.push_str(&format!("{k},{},{},{},{}\n", cz.cz, cz.alpha_lt, cz.p, cz.gap));
        rows.push(json!({ "k": k, "index": to_value(&cz) }));
    }
    let column: Vec<String> = rows
        .iter()
        .map(|r| r["index"]["cz"].to_string())
        .collect();
    let value = measured(
        json!({ "orbit_id": orbit.id, "framing": to_value(&p.framing), "n": p.n, "delta": p.delta, "rows": rows }),
        "",
        &common_annotation,
    );
    let summary = format!("CZ of {} for k = {:?}: {{{}}}", orbit.id, p.ks, column.join(", "));
    Ok((value, vec![("cz.csv".into(), csv)], summary))
}

fn run_convexity(sys: &StarShapedSystem, p: &ConvexityParams, seed: u64) -> CommandResult {
    let cfg = ConvexityConfig {
        n: p.n,
        search: OrbitSearchConfig { seed, ..p.search.clone() },
        strict: p.strict,
    };
    let report = convexity_check(sys, p.action_cap, &cfg)?;
    let table = report.table();
    let value = measured(
        json!({ "report": to_value(&report), "table": table }),
        "",
        &common_annotation,
    );
    let summary = format!(
        "dynamically convex up to action {}: {}{}",
        p.action_cap,
        report.verdict,
        if report.degenerate_flag { " (degenerate family)" } else { "" }
    );
    Ok((value, Vec::new(), summary))
}

fn run_linking(sys: &StarShapedSystem, p: &LinkingParams, base: &Path) -> CommandResult {
    let mut names = Vec::new();
    let mut curves = Vec::new();
    let mut self_links = Vec::new();
    for (i, spec) in p.orbits.iter().enumerate() {
        let orbit = resolve_orbit(sys, spec, &format!("linking.orbits[{i}]"))?;
        curves.push(ClosedCurve::from_orbit_with_gap(sys, &orbit, 1e-3)?);
        self_links.push(json!({ "orbit_id": orbit.id, "self_linking": to_value(&self_linking(sys, &orbit)?) }));
        names.push(orbit.id);
    }
    for path in &p.curve_files {
        let full = base.join(path);
        let file = fs::File::open(&full).map_err(|e| CliError::Config(format!("linking.curve_files: {}: {e}", full.display())))?;
        curves.push(ClosedCurve::read_csv(file)?);
        names.push(path.display().to_string());
    }
    if curves.len() < 2 && self_links.is_empty() {
        return Err(CliError::Config("linking: give at least two curves or one orbit".into()));
    }
    let mut pairs = Vec::new();
    let mut csv = String::from("first,second,linking\n");
    for i in 0..curves.len() {
        for j in i + 1..curves.len() {
            let lc = linking_computation(&curves[i], &curves[j], 0x11)?;
            let gauss = if p.gauss {
                json!(gauss_linking_integral(&curves[i], &curves[j]))
            } else {
                Value::Null
            };
            csv.push_str(&format!("{},{},{}\n", names[i], names[j], lc.value));
            pairs.push(json!({ "first": names[i], "second": names[j], "computation": to_value(&lc), "gauss": gauss }));
        }
    }
    let value = measured(
        json!({ "pairs": pairs, "self_linking": self_links }),
        "",
        &|k| match k {
            "gauss" => (1e-3, "Gauss integral; must lie within 1e-3 of the crossing count".into()),
            "min_distance" | "required_distance" => (0.0, "disjointness precondition: min_distance ≥ required_distance".into()),
            "epsilon" => input("pushoff distance"),
            _ => common_annotation(k),
        },
    );
    let summary = format!("{} linking pair(s), {} self-linking number(s)", pairs_len(&csv), self_links_len(&value));
    Ok((value, vec![("linking.csv".into(), csv)], summary))
}

fn pairs_len(csv: &str) -> usize {
    csv.lines().count() - 1
}

fn self_links_len(v: &Value) -> usize {
    v["self_linking"].as_array().map_or(0, |a| a.len())
}

fn rotation_annotation(k: &str) -> Annotation {
    match k {
        "rho" => (1e-6, "rotation number; frame and identity cross-checks".into()),
        "error" => (1e-6, "spread of ρ across the three frame computations".into()),
        "disk_slope" => (1e-6, "transverse turns per period in the zero-linking frame".into()),
        "identity_defect" | "frame_defect" => (1e-6, "cross-check defect; must be below 1e-6".into()),
        _ => common_annotation(k),
    }
}

fn run_rotation(sys: &StarShapedSystem, p: &RotationParams) -> CommandResult {
    let y = resolve_link(sys, &p.link, "rotation.link")?;
    let rows = (0..y.components.len())
        .map(|i| Ok(to_value(&rotation_number(sys, &y, i)?)))
        .collect::<Result<Vec<Value>, CliError>>()?;
    let value = measured(
        json!({ "link": y.description(), "components": to_value(&y.components), "rotation_numbers": rows }),
        "",
        &rotation_annotation,
    );
    Ok((value, Vec::new(), format!("rotation numbers of {}", y.description())))
}

fn run_fried(sys: &StarShapedSystem, p: &FriedParams, seed: u64) -> CommandResult {
    let y = resolve_link(sys, &p.link, "fried.link")?;
    let d = FriedConfig::default();
    let cfg = FriedConfig {
        samples: p.samples.unwrap_or(d.samples),
        horizon: p.horizon.unwrap_or(d.horizon),
        seed,
        tube_excl: p.tube_excl.unwrap_or(d.tube_excl),
        rho_tol: p.rho_tol.unwrap_or(d.rho_tol),
        mu_tol: p.mu_tol.unwrap_or(d.mu_tol),
    };
    let report = fried_check_class(sys, &y, &cfg)?;
    let csv = csv_string(|b| report.intersection.write_csv(b))?;
    let horizon = cfg.horizon;
    let value = measured(to_value(&report), "", &move |k| match k {
        "estimate" | "half_horizon_estimate" | "min" | "mean" | "bound" => {
            (2.0 / horizon, "Birkhoff estimate of μ·y; closing chord contributes at most 2/T".into())
        }
        "t_n" => (1e-9, "closing time, golden-section refined".into()),
        "recurrence_distance" => (cfg.tube_excl, "best return distance found in [T/2, T]".into()),
        "start" => (0.0, "sampled start point".into()),
        "loop_gap" => (1e-2, "largest sample spacing of the closed loop".into()),
        "cauchy_constant" => (0.0, "fitted C in |estimate(T) − estimate(T/2)| ≤ C/T".into()),
        "sup_return_times" => (1e-6, "page return time, bisection refined".into()),
        _ => rotation_annotation(k),
    });
    let summary = format!("Fried certification of {}: verdict {}", y.description(), report.verdict);
    Ok((value, vec![("fried_samples.csv".into(), csv)], summary))
}

fn section_annotation(k: &str) -> Annotation {
    match k {
        "rho" | "phi" => (1e-9, "chart coordinate".into()),
        "tau" | "inf" | "sup" => (1e-6, "return time, bisection refined".into()),
        "min_rate" | "max_rate" => (1e-12, "flow derivative of the page coordinate".into()),
        "quadrature" | "stokes" => (1e-5, "page area; quadrature and Stokes agree within 1e-5 relative".into()),
        "area" | "image_area" => (1e-4, "dλ-area of a chart rectangle and of its image".into()),
        "relative_difference" => (1e-4, "relative area defect".into()),
        _ => common_annotation(k),
    }
}

fn run_section(sys: &StarShapedSystem, p: &SectionParams) -> CommandResult {
    let page = build_tilted_page(sys, p.binding, p.theta0, p.tilt)?;
    let scan = transversality_scan(&page, p.n_rho, p.n_phi);
    let bounds = return_time_bounds(&page, p.n_rho, p.n_phi)?;
    let value = measured(
        json!({
            "binding": p.binding.name(),
            "theta0": page.theta0,
            "tilt": p.tilt,
            "rho_max": page.rho_max(),
            "transversality": to_value(&scan),
            "return_time_bounds": to_value(&bounds),
        }),
        "",
        &|k| match k {
            "rho_max" => (1e-12, "upper end of the radial chart coordinate".into()),
            _ => section_annotation(k),
        },
    );
    let summary = format!(
        "page of {}: min rate {:.6}, return time in [{:.9}, {:.9}]",
        p.binding.name(),
        scan.min_rate,
        bounds.inf,
        bounds.sup
    );
    Ok((value, Vec::new(), summary))
}

fn run_return_map(sys: &StarShapedSystem, p: &ReturnMapParams) -> CommandResult {
    let page = build_tilted_page(sys, p.binding, p.theta0, 0.0)?;
    let start = ChartPoint {
        rho: p.start[0],
        phi: p.start[1],
    };
    if !(start.rho > 0.0 && start.rho < page.rho_max()) {
        return Err(CliError::Config(format!(
            "return_map.start: ρ must lie in (0, {})",
            page.rho_max()
        )));
    }
    let rows = return_orbit(&page, start, p.iterates)?;
    let csv = csv_string(|b| write_return_orbit_csv(&rows, b))?;
    let iterates: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "rho": r.point.rho, "phi": r.point.phi, "tau": r.tau }))
        .collect();
    let value = measured(
        json!({ "binding": p.binding.name(), "theta0": page.theta0, "start": { "rho": start.rho, "phi": start.phi }, "iterates": iterates }),
        "",
        &section_annotation,
    );
    Ok((value, vec![("return_map.csv".into(), csv)], format!("{} returns to the page", rows.len())))
}

fn run_area(sys: &StarShapedSystem, p: &AreaParams, seed: u64) -> CommandResult {
    let page = build_tilted_page(sys, p.binding, p.theta0, 0.0)?;
    let area = page_area(&page)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rmax = page.rho_max();
    let rects: Vec<((f64, f64), (f64, f64))> = (0..p.rectangles)
        .map(|_| {
            let r0 = rng.gen_range(0.05..0.6) * rmax;
            let r1 = r0 + rng.gen_range(0.05..0.3) * rmax;
            let f0 = rng.gen_range(0.0..2.0 * PI);
            let f1 = f0 + rng.gen_range(0.2..1.5);
            ((r0, r1), (f0, f1))
        })
        .collect();
    let checks = rects
        .iter()
        .map(|(r, f)| Ok(to_value(&area_preservation(&page, *r, *f)?)))
        .collect::<Result<Vec<Value>, CliError>>()?;
    let value = measured(
        json!({ "binding": p.binding.name(), "theta0": page.theta0, "page_area": to_value(&area), "preservation": checks }),
        "",
        &|k| match k {
            "relative_difference" => (1e-5, "relative defect: Stokes (1e-5) or area preservation (1e-4)".into()),
            "rho" | "phi" => (0.0, "chart rectangle corner".into()),
            _ => section_annotation(k),
        },
    );
    Ok((value, Vec::new(), format!("page area {:.9} (Stokes {:.9})", area.quadrature, area.stokes)))
}

// ------------------------------------------------------------------ entry

/// Writes the JSON record and CSVs into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut written = Vec::new();
    let json_path = dir.join(format!("{}.json", out.command.name()));
    fs::write(&json_path, out.json()).map_err(|e| io_err(&json_path, e))?;
    written.push(json_path);
    for (name, body) in &out.csv {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Parses the scenario at `args.config`, runs the command and writes outputs.
pub fn execute(args: &Args) -> Result<(RunOutput, Vec<PathBuf>), CliError> {
    let text = fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(format!("{}: {e}", args.config.display())))?;
    let scenario = parse_scenario(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", args.config.display())),
        other => other,
    })?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let out = run_scenario(args.command, &scenario, args.seed, base)?;
    let dir = args
        .out
        .clone()
        .or_else(|| scenario.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("reeblab-out"));
    let written = write_outputs(&out, &dir)?;
    Ok((out, written))
}

/// Caps the rayon pool at `REEBLAB_THREADS` when set.
pub fn configure_threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var("REEBLAB_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Config(format!("REEBLAB_THREADS must be a positive integer, got '{v}'")))?;
        if n == 0 {
            return Err(CliError::Config("REEBLAB_THREADS must be positive".into()));
        }
        // a second initialization in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Process entry point; returns the exit status.
pub fn main_entry() -> i32 {
    let args = Args::parse();
    let result = configure_threads().and_then(|_| execute(&args));
    match result {
        Ok((out, written)) => {
            use std::io::Write;
            // a closed stdout must not turn success into a panic
            let mut stdout = std::io::stdout().lock();
            let _ = writeln!(stdout, "{}", out.summary);
            for p in written {
                let _ = writeln!(stdout, "wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("reeblab: {e}");
            e.exit_code()
        }
    }
}

/// Numeric leaves of a measured record keyed by JSON path; used by
/// golden-file comparisons.
pub fn numeric_leaves(v: &Value) -> BTreeMap<String, f64> {
    fn walk(v: &Value, path: String, out: &mut BTreeMap<String, f64>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    walk(x, format!("{path}/{k}"), out);
                }
            }
            Value::Array(a) => {
                for (i, x) in a.iter().enumerate() {
                    walk(x, format!("{path}/{i}"), out);
                }
            }
            Value::Number(n) => {
                out.insert(path, n.as_f64().expect("finite"));
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk(v, String::new(), &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPLIT: &str = "[system]\nhamiltonian = \"split\"\na = 1.0\nb = 1.4142135623730951\n";

    fn run(command: Command, text: &str) -> Result<RunOutput, CliError> {
        let s = parse_scenario(text)?;
        run_scenario(command, &s, None, Path::new("."))
    }

    fn no_bare_numbers(v: &Value) -> bool {
        match v {
            Value::Object(m) if m.contains_key("value") && m.contains_key("tolerance") => true,
            Value::Object(m) => m.values().all(no_bare_numbers),
            Value::Array(a) => a.iter().all(no_bare_numbers),
            Value::Number(_) => false,
            _ => true,
        }
    }

    #[test]
    fn malformed_config_reports_location() {
        let err = parse_scenario("[system]\nhamiltonian = \nb = 2").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("line"), "{err}");
        let err = parse_scenario("[system]\nhamiltonian = \"split\"\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn unknown_orbit_and_missing_table_are_config_errors() {
        let text = format!("{SPLIT}[cz]\norbit = \"gamma9\"\nks = [1]\n");
        assert_eq!(run(Command::Cz, &text).unwrap_err().exit_code(), 2);
        assert_eq!(run(Command::Section, SPLIT).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn sampling_commands_need_a_seed() {
        let text = format!("{SPLIT}[area]\nbinding = \"first\"\n");
        assert!(matches!(run(Command::Area, &text), Err(CliError::Config(_))));
    }

    #[test]
    fn command_mismatch_is_rejected() {
        let text = format!("command = \"cz\"\n{SPLIT}[section]\nbinding = \"first\"\n");
        assert_eq!(run(Command::Section, &text).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn cz_column_and_measured_numbers() {
        let text = format!("{SPLIT}[cz]\norbit = \"gamma1\"\nks = [1, 2, 3]\nn = 128\n");
        let out = run(Command::Cz, &text).unwrap();
        assert!(no_bare_numbers(&out.record));
        let rows = out.record["result"]["rows"].as_array().unwrap();
        let cz: Vec<i64> = rows.iter().map(|r| r["index"]["cz"]["value"].as_i64().unwrap()).collect();
        assert_eq!(cz, vec![3, 7, 11]);
        assert_eq!(out.csv[0].1.lines().count(), 4);
    }

    #[test]
    fn section_record() {
        let text = format!("{SPLIT}[section]\nbinding = \"first\"\nn_rho = 2\nn_phi = 2\n");
        let out = run(Command::Section, &text).unwrap();
        assert!(no_bare_numbers(&out.record));
        let inf = out.record["result"]["return_time_bounds"]["inf"]["value"].as_f64().unwrap();
        assert!((inf - PI * 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn empty_return_orbit_gives_header_only_csv() {
        let text = format!("{SPLIT}[return_map]\nbinding = \"first\"\nstart = [0.5, 0.0]\niterates = 0\n");
        let out = run(Command::ReturnMap, &text).unwrap();
        assert_eq!(out.csv[0].1, "iterate,rho,phi,tau\n");
    }
}
