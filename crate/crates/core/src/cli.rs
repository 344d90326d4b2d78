//! The `wfpp` command-line tool.
//!
//! Every subcommand reads a JSON config (optional where flags suffice),
//! applies flag and `--set key=value` overrides, runs, and writes its outputs
//! into the output directory. Failures print one JSON object on stderr and
//! exit with 2 (usage), 3 (config) or 4 (runtime).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::dmetric::{trace_d_ball_with, BallOptions};
use crate::engine::{
    run_eden_chain, run_fpp, save_snapshot_csv, write_snapshot_binary, RunConfig, RunResult, StopReason,
};
use crate::error::Error;
use crate::experiments::{
    estimate_chi, run_cone, run_covering, run_limit_shape, run_urn_d1, write_report, ExperimentKind, ExperimentSpec,
    Report,
};
use crate::geometry::estimate_mu;
use crate::lattice::Vertex;
use crate::weights::{compute_lambda, AlphaWeightFunction, NormSpec, SphereProfile};

pub const OUTPUT_DIR_ENV: &str = "WFPP_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "wfpp-out";

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_RUNTIME: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "wfpp", version, about = "Weighted first-passage percolation and Eden growth")]
pub struct Cli {
    /// Worker threads for replicate-parallel work.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// JSON config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Base seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a config key, e.g. `--set stop_rule.n=5000`. Values are JSON,
    /// or plain strings.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Output directory (default: $WFPP_OUTPUT_DIR, else wfpp-out).
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Sampler {
    Fpp,
    Eden,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum, Default)]
pub enum Colormap {
    #[default]
    Heat,
    Gray,
}

#[derive(Args, Debug, Clone)]
pub struct WeightFlags {
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    /// `const:<c>`, `norm:<norm>[:<exponent>]` or `<norm>`.
    #[arg(long)]
    pub profile: Option<String>,
    /// `euclidean`, `l1`, `linf` or `<factor>*<norm>`.
    #[arg(long)]
    pub mu: Option<String>,
    #[arg(long)]
    pub dim: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run one growth from a RunConfig.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fpp")]
        sampler: Sampler,
        /// Also write the edge log in the binary format.
        #[arg(long)]
        binary: bool,
        /// Colormap of the planar cluster image.
        #[arg(long, value_enum, default_value = "heat")]
        colormap: Colormap,
    },
    /// Trace a D-ball around the origin.
    Dball {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        weight: WeightFlags,
        #[arg(long)]
        radius: Option<f64>,
        #[arg(long)]
        directions: Option<usize>,
    },
    /// Limit-shape experiment.
    Shape {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the standard FPP limit-shape norm.
    MuEstimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        time: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Half the D-circumference of the unit sphere.
    Lambda {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        weight: WeightFlags,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Cone containment experiment.
    Cone {
        #[command(flatten)]
        common: Common,
    },
    /// Annulus covering experiment.
    Cover {
        #[command(flatten)]
        common: Common,
    },
    /// One-dimensional urn experiment.
    Urn {
        #[command(flatten)]
        common: Common,
    },
    /// Shape fluctuation exponent.
    Chi {
        #[command(flatten)]
        common: Common,
    },
}

/// Machine-readable failure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CliError {
    #[serde(skip)]
    pub code: i32,
    pub category: String,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError { code: EXIT_USAGE, category: "usage".into(), message: msg.into() }
    }

    fn config(category: &str, msg: impl Into<String>) -> Self {
        CliError { code: EXIT_CONFIG, category: category.into(), message: msg.into() }
    }

    fn to_json(&self) -> String {
        json!({ "error": { "category": self.category, "message": self.message, "exit_code": self.code } }).to_string()
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError { code: EXIT_RUNTIME, category: e.category().into(), message: e.to_string() }
    }
}

fn io_err(e: std::io::Error) -> CliError {
    Error::Io(e).into()
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn main_entry() -> i32 {
    parse_and_dispatch(std::env::args_os().collect())
}

/// Parse `argv`, run, and return the exit code.
pub fn parse_and_dispatch(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let err = CliError::usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return err.code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("{}", err.to_json());
            err.code
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        // A pool may already exist when called repeatedly in one process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Simulate { common, sampler, binary, colormap } => simulate(&common, sampler, binary, colormap),
        Command::Dball { common, weight, radius, directions } => dball(&common, &weight, radius, directions),
        Command::Shape { common } => experiment(&common, ExperimentKind::LimitShape, "shape", |s| {
            run_limit_shape(s).map(Box::new).map(|r| r as Box<dyn ReportDyn>)
        }),
        Command::MuEstimate { common, replicates, time, bins } => mu_estimate(&common, replicates, time, bins),
        Command::Lambda { common, weight, resolution } => lambda(&common, &weight, resolution),
        Command::Cone { common } => experiment(&common, ExperimentKind::Cone, "cone", |s| {
            run_cone(s).map(|r| Box::new(r) as Box<dyn ReportDyn>)
        }),
        Command::Cover { common } => experiment(&common, ExperimentKind::Covering, "cover", |s| {
            run_covering(s).map(|r| Box::new(r) as Box<dyn ReportDyn>)
        }),
        Command::Urn { common } => experiment(&common, ExperimentKind::UrnD1, "urn", |s| {
            run_urn_d1(s).map(|r| Box::new(r) as Box<dyn ReportDyn>)
        }),
        Command::Chi { common } => experiment(&common, ExperimentKind::ChiEstimate, "chi", |s| {
            estimate_chi(s).map(|r| Box::new(r) as Box<dyn ReportDyn>)
        }),
    }
}

// ---------------------------------------------------------------------------
// Config loading

fn output_dir(common: &Common) -> PathBuf {
    common
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

fn load_config_value(path: Option<&Path>, required: bool) -> CliResult<Value> {
    let Some(path) = path else {
        if required {
            return Err(CliError::usage("--config is required for this subcommand"));
        }
        return Ok(Value::Object(Map::new()));
    };
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(CliError::config("config.not_found", format!("config file {} not found", path.display())))
        }
        Err(e) => return Err(CliError::config("config.unreadable", format!("{}: {e}", path.display()))),
    };
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::config("config.parse", e.to_string()))?;
    if !v.is_object() {
        return Err(CliError::config("config.parse", "config must be a JSON object"));
    }
    Ok(v)
}

/// Set `a.b.c` in a JSON object, creating intermediate objects.
pub fn set_path(root: &mut Value, key: &str, value: Value) -> CliResult<()> {
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, p) in parts.iter().enumerate() {
        if p.is_empty() {
            return Err(CliError::config("config.override", format!("bad override key '{key}'")));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| CliError::config("config.override", format!("'{key}' does not name an object field")))?;
        if i + 1 == parts.len() {
            obj.insert((*p).to_string(), value);
            return Ok(());
        }
        cur = obj.entry((*p).to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Ok(())
}

fn apply_overrides(v: &mut Value, overrides: &[String]) -> CliResult<()> {
    for o in overrides {
        let (k, raw) = o
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("override '{o}' is not of the form key=value")))?;
        let val = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(v, k.trim(), val)?;
    }
    Ok(())
}

fn typed<T: DeserializeOwned>(v: Value) -> CliResult<T> {
    serde_json::from_value(v).map_err(|e| {
        let msg = e.to_string();
        let cat = if msg.starts_with("unknown field") || msg.starts_with("unknown variant") {
            "config.unknown_key"
        } else if msg.starts_with("missing field") {
            "config.missing_key"
        } else {
            "config.invalid"
        };
        CliError::config(cat, msg)
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(io_err)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(io_err)
}

fn print_written(paths: &[PathBuf]) {
    let out = std::io::stdout();
    let mut out = out.lock();
    for p in paths {
        let _ = writeln!(out, "{}", p.display());
    }
}

// ---------------------------------------------------------------------------
// simulate

#[derive(Serialize)]
struct RunSummary<'a> {
    sampler: &'a str,
    dimension: usize,
    seed: u64,
    stop_time: f64,
    stop_reason: &'a StopReason,
    edge_count: usize,
    vertex_count: usize,
    exit_vertex: Option<Vec<i32>>,
    rng_draw_count: u64,
    snapshots: Vec<Value>,
    config: &'a RunConfig,
}

fn simulate(common: &Common, sampler: Sampler, binary: bool, colormap: Colormap) -> CliResult<()> {
    let mut v = load_config_value(common.config.as_deref(), true)?;
    if let Some(s) = common.seed {
        set_path(&mut v, "seed", json!(s))?;
    }
    apply_overrides(&mut v, &common.overrides)?;
    let config: RunConfig = typed(v)?;
    config.validate().map_err(|e| CliError::config("config.invalid", e.to_string()))?;
    let run: RunResult = match sampler {
        Sampler::Fpp => run_fpp(&config)?,
        Sampler::Eden => run_eden_chain(&config)?,
    };
    let dir = output_dir(common);
    create_dir(&dir)?;
    let st = &run.final_state;
    let mut written = Vec::new();
    let edges_csv = dir.join("edges.csv");
    save_snapshot_csv(&edges_csv, config.dimension, &st.edge_log)?;
    written.push(edges_csv);
    let mut snaps = Vec::new();
    for (k, s) in run.snapshots.iter().enumerate() {
        let p = dir.join(format!("snapshot_{k:03}.csv"));
        save_snapshot_csv(&p, config.dimension, st.snapshot_edges(s))?;
        snaps.push(json!({ "file": p.file_name().unwrap().to_string_lossy(), "time": s.time,
            "edge_count": s.edge_count, "vertex_count": s.vertex_count }));
        if config.dimension == 2 {
            let img = dir.join(format!("snapshot_{k:03}.ppm"));
            write_file(&img, &render_snapshot(st.snapshot_vertices(s), colormap)?)?;
            written.push(img);
        }
        written.push(p);
    }
    if binary {
        let p = dir.join("edges.bin");
        let mut buf = Vec::new();
        write_snapshot_binary(&mut buf, config.dimension, &st.edge_log)?;
        write_file(&p, &buf)?;
        written.push(p);
    }
    if config.dimension == 2 {
        let p = dir.join("cluster.ppm");
        write_file(&p, &render_snapshot(&st.vertex_log, colormap)?)?;
        written.push(p);
    }
    let summary = RunSummary {
        sampler: match sampler {
            Sampler::Fpp => "fpp",
            Sampler::Eden => "eden",
        },
        dimension: config.dimension,
        seed: config.seed,
        stop_time: run.stop_time,
        stop_reason: &run.stop_reason,
        edge_count: st.step_count(),
        vertex_count: st.vertex_count(),
        exit_vertex: run.exit_vertex.map(|v| v.coords().to_vec()),
        rng_draw_count: run.rng_draw_count,
        snapshots: snaps,
        config: &config,
    };
    let p = dir.join("run.json");
    write_file(&p, (serde_json::to_string_pretty(&summary).map_err(Error::Json)? + "\n").as_bytes())?;
    written.push(p);
    print_written(&written);
    Ok(())
}

/// Binary P6 pixmap of a planar cluster, one pixel per lattice site of the
/// bounding box, coloured by absorption-order quantile; unoccupied sites are
/// white.
pub fn render_snapshot(vertices: &[(Vertex, f64)], colormap: Colormap) -> crate::Result<Vec<u8>> {
    if let Some((v, _)) = vertices.first() {
        if v.dim() != 2 {
            return Err(Error::UnsupportedDimension(v.dim()));
        }
    } else {
        return Err(Error::Precondition("cannot render an empty cluster".into()));
    }
    let (mut x0, mut x1, mut y0, mut y1) = (i32::MAX, i32::MIN, i32::MAX, i32::MIN);
    for (v, _) in vertices {
        x0 = x0.min(v.coord(0));
        x1 = x1.max(v.coord(0));
        y0 = y0.min(v.coord(1));
        y1 = y1.max(v.coord(1));
    }
    let (w, h) = ((x1 - x0 + 1) as usize, (y1 - y0 + 1) as usize);
    let mut px = vec![255u8; w * h * 3];
    let n = vertices.len();
    for (rank, (v, _)) in vertices.iter().enumerate() {
        let q = if n > 1 { rank as f64 / (n - 1) as f64 } else { 0.0 };
        let c = color(colormap, q);
        // Top row is the largest y.
        let row = (y1 - v.coord(1)) as usize;
        let col = (v.coord(0) - x0) as usize;
        px[(row * w + col) * 3..(row * w + col) * 3 + 3].copy_from_slice(&c);
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(&px);
    Ok(out)
}

fn color(map: Colormap, q: f64) -> [u8; 3] {
    let q = q.clamp(0.0, 1.0);
    match map {
        Colormap::Gray => {
            let g = (q * 200.0).round() as u8;
            [g, g, g]
        }
        Colormap::Heat => {
            const STOPS: [[f64; 3]; 5] = [
                [20.0, 20.0, 120.0],
                [40.0, 110.0, 200.0],
                [60.0, 180.0, 90.0],
                [240.0, 200.0, 40.0],
                [200.0, 30.0, 30.0],
            ];
            let t = q * (STOPS.len() - 1) as f64;
            let i = (t.floor() as usize).min(STOPS.len() - 2);
            let f = t - i as f64;
            let mut c = [0u8; 3];
            for k in 0..3 {
                c[k] = (STOPS[i][k] + f * (STOPS[i + 1][k] - STOPS[i][k])).round() as u8;
            }
            c
        }
    }
}

// ---------------------------------------------------------------------------
// dball and lambda

/// A norm or profile given either in the short text form or as JSON.
fn norm_of(v: &Value) -> CliResult<NormSpec> {
    match v {
        Value::String(s) => NormSpec::parse(s).map_err(|e| CliError::config("config.invalid", e.to_string())),
        other => typed(other.clone()),
    }
}

fn profile_of(v: &Value, alpha: f64) -> CliResult<SphereProfile> {
    match v {
        Value::String(s) => SphereProfile::parse(s, alpha).map_err(|e| CliError::config("config.invalid", e.to_string())),
        other => typed(other.clone()),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BallConfig {
    alpha: f64,
    #[serde(default = "default_profile")]
    profile: Value,
    #[serde(default = "default_mu")]
    mu: Value,
    #[serde(default = "default_dim")]
    dim: usize,
    radius: f64,
    #[serde(default = "default_directions")]
    directions: usize,
    #[serde(default)]
    cells: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LambdaConfig {
    #[serde(default)]
    alpha: f64,
    #[serde(default = "default_profile")]
    profile: Value,
    #[serde(default = "default_mu")]
    mu: Value,
    #[serde(default = "default_dim")]
    dim: usize,
    #[serde(default = "default_resolution")]
    resolution: usize,
}

fn default_profile() -> Value {
    json!("const:1")
}
fn default_mu() -> Value {
    json!("euclidean")
}
fn default_dim() -> usize {
    2
}
fn default_directions() -> usize {
    256
}
fn default_resolution() -> usize {
    1024
}

fn weight_flag_overrides(v: &mut Value, w: &WeightFlags) -> CliResult<()> {
    if let Some(a) = w.alpha {
        set_path(v, "alpha", json!(a))?;
    }
    if let Some(p) = &w.profile {
        set_path(v, "profile", json!(p))?;
    }
    if let Some(m) = &w.mu {
        set_path(v, "mu", json!(m))?;
    }
    if let Some(d) = w.dim {
        set_path(v, "dim", json!(d))?;
    }
    Ok(())
}

fn dball(common: &Common, w: &WeightFlags, radius: Option<f64>, directions: Option<usize>) -> CliResult<()> {
    let mut v = load_config_value(common.config.as_deref(), false)?;
    weight_flag_overrides(&mut v, w)?;
    if let Some(r) = radius {
        set_path(&mut v, "radius", json!(r))?;
    }
    if let Some(n) = directions {
        set_path(&mut v, "directions", json!(n))?;
    }
    apply_overrides(&mut v, &common.overrides)?;
    let cfg: BallConfig = typed(v)?;
    let profile = profile_of(&cfg.profile, cfg.alpha)?;
    let mu = norm_of(&cfg.mu)?;
    let f = AlphaWeightFunction::new(cfg.alpha, profile, cfg.dim)?;
    let cells = cfg.cells.unwrap_or(if cfg.dim == 3 { 40 } else { BallOptions::default().cells });
    let ball = trace_d_ball_with(&f, &mu, cfg.radius, cfg.directions, BallOptions { cells })?;
    let dir = output_dir(common);
    create_dir(&dir)?;
    let csv = dir.join("dball.csv");
    ball.save_csv(&csv)?;
    let meta = json!({
        "alpha": f.alpha, "dim": f.dim, "radius": ball.radius, "directions": ball.directions.len(),
        "grid_step": ball.grid_step, "box_halfwidth": ball.box_halfwidth, "stencil_factor": ball.stencil_factor,
        "bisection_tol": ball.bisection_tol, "seeding": ball.center_rule, "convex": ball.is_convex(),
        "weight": f, "mu": mu,
    });
    let js = dir.join("dball.json");
    write_file(&js, (serde_json::to_string_pretty(&meta).map_err(Error::Json)? + "\n").as_bytes())?;
    print_written(&[csv, js]);
    Ok(())
}

fn lambda(common: &Common, w: &WeightFlags, resolution: Option<usize>) -> CliResult<()> {
    let mut v = load_config_value(common.config.as_deref(), false)?;
    weight_flag_overrides(&mut v, w)?;
    if let Some(r) = resolution {
        set_path(&mut v, "resolution", json!(r))?;
    }
    apply_overrides(&mut v, &common.overrides)?;
    let cfg: LambdaConfig = typed(v)?;
    let profile = profile_of(&cfg.profile, cfg.alpha)?;
    let mu = norm_of(&cfg.mu)?;
    let f = AlphaWeightFunction::new(cfg.alpha, profile, cfg.dim)?;
    let est = compute_lambda(&f, &mu, cfg.resolution)?;
    let dir = output_dir(common);
    create_dir(&dir)?;
    let p = dir.join("lambda.json");
    let out = json!({ "estimate": est, "weight": f, "mu": mu });
    write_file(&p, (serde_json::to_string_pretty(&out).map_err(Error::Json)? + "\n").as_bytes())?;
    print_written(&[p]);
    Ok(())
}

// ---------------------------------------------------------------------------
// experiments

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MuConfig {
    #[serde(default = "default_mu_replicates")]
    replicates: usize,
    #[serde(default = "default_mu_time")]
    time: f64,
    #[serde(default = "default_mu_bins")]
    bins: usize,
    #[serde(default)]
    seed: u64,
}

fn default_mu_replicates() -> usize {
    8
}
fn default_mu_time() -> f64 {
    100.0
}
fn default_mu_bins() -> usize {
    64
}

fn mu_estimate(common: &Common, replicates: Option<usize>, time: Option<f64>, bins: Option<usize>) -> CliResult<()> {
    let mut v = load_config_value(common.config.as_deref(), false)?;
    if let Some(r) = replicates {
        set_path(&mut v, "replicates", json!(r))?;
    }
    if let Some(t) = time {
        set_path(&mut v, "time", json!(t))?;
    }
    if let Some(b) = bins {
        set_path(&mut v, "bins", json!(b))?;
    }
    if let Some(s) = common.seed {
        set_path(&mut v, "seed", json!(s))?;
    }
    apply_overrides(&mut v, &common.overrides)?;
    let cfg: MuConfig = typed(v)?;
    let est = estimate_mu(cfg.replicates, cfg.time, cfg.seed, cfg.bins)?;
    let dir = output_dir(common);
    create_dir(&dir)?;
    let csv = dir.join("mu.csv");
    est.save_csv(&csv)?;
    let js = dir.join("mu.json");
    let convex = est.is_convex(1e-9);
    let out = json!({ "estimate": est, "convex": convex });
    write_file(&js, (serde_json::to_string_pretty(&out).map_err(Error::Json)? + "\n").as_bytes())?;
    print_written(&[csv, js]);
    Ok(())
}

/// Object-safe view of a report.
trait ReportDyn {
    fn write(&self, dir: &Path, stem: &str) -> crate::Result<(PathBuf, PathBuf)>;
}

impl<R: Report> ReportDyn for R {
    fn write(&self, dir: &Path, stem: &str) -> crate::Result<(PathBuf, PathBuf)> {
        write_report(dir, stem, self)
    }
}

fn experiment(
    common: &Common,
    kind: ExperimentKind,
    stem: &str,
    run: impl FnOnce(&ExperimentSpec) -> crate::Result<Box<dyn ReportDyn>>,
) -> CliResult<()> {
    let mut v = load_config_value(common.config.as_deref(), true)?;
    if let Some(s) = common.seed {
        set_path(&mut v, "engine_config.seed", json!(s))?;
    }
    apply_overrides(&mut v, &common.overrides)?;
    let spec: ExperimentSpec = typed(v)?;
    if spec.kind != kind {
        return Err(CliError::config(
            "config.invalid",
            format!("config kind {:?} does not match the subcommand", spec.kind),
        ));
    }
    spec.validate().map_err(|e| CliError::config("config.invalid", e.to_string()))?;
    let report = run(&spec)?;
    let dir = common.output_dir.clone().or(spec.output_dir.clone()).unwrap_or_else(|| output_dir(common));
    let (a, b) = report.write(&dir, stem)?;
    print_written(&[a, b]);
    Ok(())
}
