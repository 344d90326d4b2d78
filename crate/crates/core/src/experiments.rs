//! Config-driven experiments: limit shapes, annulus covering, cone
//! containment, the one-dimensional urn and fluctuation exponents.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::dmetric::{trace_d_ball, DBall, BALL_BISECTION_TOL, EDGE_QUAD_NODES};
use crate::engine::{run_eden_chain, run_fpp, Checkpoint, RunConfig, StopRule};
use crate::error::{Error, Result};
use crate::geometry::{
    bin_angles, check_alpha_near_1_condition, alpha_near_1_threshold, check_cone_conditions,
    classify_vertices, cluster_radii, estimate_mu, AdmissibleProfile, ConeConditions, ConeSpec, ConeStats,
    CylinderNorm,
};
use crate::lattice::Vertex;
use crate::numeric::{linear_fit, replicate_seed};
use crate::weights::{compute_lambda, compute_shape_constants, AlphaWeightFunction, NormSpec};

pub const BOOTSTRAP_RESAMPLES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    LimitShape,
    Covering,
    Cone,
    UrnD1,
    ChiEstimate,
    MuEstimate,
}

/// Reference shape for limit-shape runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeReference {
    /// D-ball of radius 1 for the run's weight and the given norm.
    DBall { mu: NormSpec },
    /// D-ball for the limit-shape norm estimated from standard FPP clusters.
    MuHat { replicates: usize, time: f64 },
}

impl Default for ShapeReference {
    fn default() -> Self {
        ShapeReference::DBall { mu: NormSpec::Euclidean }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    pub engine_config: RunConfig,
    pub replicates: usize,
    /// Checkpoint times (limit_shape, chi_estimate) or the single time of
    /// mu_estimate.
    #[serde(default)]
    pub times: Vec<f64>,
    /// Annulus indices n for covering.
    #[serde(default)]
    pub radii: Vec<usize>,
    /// Angular bins for boundary radii.
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Covering: runs until the cluster leaves the ball of radius R n.
    #[serde(default = "default_radius_factor")]
    pub radius_factor: f64,
    /// Cone: edges per run.
    #[serde(default = "default_edges")]
    pub edges: usize,
    #[serde(default = "default_tail")]
    pub tail_fraction: f64,
    #[serde(default = "default_containment")]
    pub containment_threshold: f64,
    /// Cone: the cylinder norm whose power is the weight.
    #[serde(default)]
    pub cylinder: Option<CylinderNorm>,
    /// Urn: number of Eden steps.
    #[serde(default = "default_urn_steps")]
    pub steps: usize,
    #[serde(default)]
    pub reference: ShapeReference,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

fn default_bins() -> usize {
    64
}
fn default_radius_factor() -> f64 {
    8.0
}
fn default_edges() -> usize {
    100_000
}
fn default_tail() -> f64 {
    0.1
}
fn default_containment() -> f64 {
    0.99
}
fn default_urn_steps() -> usize {
    20
}
fn default_resamples() -> usize {
    BOOTSTRAP_RESAMPLES
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ExperimentSpec {
    pub fn new(kind: ExperimentKind, engine_config: RunConfig, replicates: usize) -> Self {
        ExperimentSpec {
            kind,
            engine_config,
            replicates,
            times: Vec::new(),
            radii: Vec::new(),
            bins: default_bins(),
            radius_factor: default_radius_factor(),
            edges: default_edges(),
            tail_fraction: default_tail(),
            containment_threshold: default_containment(),
            cylinder: None,
            steps: default_urn_steps(),
            reference: ShapeReference::default(),
            bootstrap_resamples: default_resamples(),
            output_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.engine_config.validate()?;
        if self.replicates == 0 {
            return Err(Error::Precondition("replicates must be at least 1".into()));
        }
        if !strictly_increasing(&self.times) || !strictly_increasing(&self.radii) {
            return Err(Error::Precondition("schedules must be strictly increasing".into()));
        }
        if self.bins < 8 {
            return Err(Error::Precondition("bins must be at least 8".into()));
        }
        Ok(())
    }

    fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64)
            .map(|i| replicate_seed(self.engine_config.seed, i))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub crate_version: String,
    pub experiment: ExperimentKind,
    pub base_seed: u64,
    pub replicate_seeds: Vec<u64>,
    pub replicates: usize,
    pub alpha: f64,
    pub dimension: usize,
    pub grid_step: Option<f64>,
    pub quadrature_nodes: Option<usize>,
    pub bisection_tol: Option<f64>,
    pub bootstrap_resamples: Option<usize>,
    pub notes: Vec<String>,
}

impl Provenance {
    fn new(spec: &ExperimentSpec, seeds: Vec<u64>) -> Self {
        Provenance {
            crate_version: env!("CARGO_PKG_VERSION").into(),
            experiment: spec.kind,
            base_seed: spec.engine_config.seed,
            replicates: seeds.len(),
            replicate_seeds: seeds,
            alpha: spec.engine_config.weight.alpha,
            dimension: spec.engine_config.dimension,
            grid_step: None,
            quadrature_nodes: None,
            bisection_tol: None,
            bootstrap_resamples: None,
            notes: Vec::new(),
        }
    }
}

/// All reports serialize to JSON and render one CSV table.
pub trait Report: Serialize {
    fn csv(&self) -> String;
}

/// Write `<stem>.json` and `<stem>.csv` into `dir`.
pub fn write_report<R: Report>(dir: &Path, stem: &str, report: &R) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir)?;
    let json = dir.join(format!("{stem}.json"));
    let csv = dir.join(format!("{stem}.csv"));
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n")?;
    std::fs::write(&csv, report.csv())?;
    Ok((json, csv))
}

// ---------------------------------------------------------------------------
// Bootstrap

/// Percentile interval of `stat` over resamples of `0..n`, widened to
/// contain `estimate`.
fn bootstrap_ci(n: usize, resamples: usize, seed: u64, estimate: f64, mut stat: impl FnMut(&[usize]) -> Option<f64>) -> (f64, f64) {
    if n < 2 || resamples == 0 {
        return (estimate, estimate);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vals = Vec::with_capacity(resamples);
    let mut idx = vec![0usize; n];
    for _ in 0..resamples {
        for i in idx.iter_mut() {
            *i = rng.random_range(0..n);
        }
        if let Some(v) = stat(&idx) {
            if v.is_finite() {
                vals.push(v);
            }
        }
    }
    if vals.is_empty() {
        return (estimate, estimate);
    }
    vals.sort_by(f64::total_cmp);
    let q = |p: f64| vals[((p * (vals.len() - 1) as f64).round() as usize).min(vals.len() - 1)];
    (q(0.025).min(estimate), q(0.975).max(estimate))
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    s / n as f64
}

// ---------------------------------------------------------------------------
// Boundaries and Hausdorff distances

/// Corners of the outer boundary of the union of unit squares centred at the
/// planar vertices: the sides shared between an occupied cell and a cell
/// reachable from outside the bounding box.
pub fn outer_boundary_points(vertices: &[Vertex]) -> Result<Vec<(f64, f64)>> {
    if vertices.iter().any(|v| v.dim() != 2) {
        return Err(Error::UnsupportedDimension(vertices[0].dim()));
    }
    if vertices.is_empty() {
        return Ok(Vec::new());
    }
    let (mut x0, mut x1, mut y0, mut y1) = (i32::MAX, i32::MIN, i32::MAX, i32::MIN);
    for v in vertices {
        x0 = x0.min(v.coord(0));
        x1 = x1.max(v.coord(0));
        y0 = y0.min(v.coord(1));
        y1 = y1.max(v.coord(1));
    }
    let (x0, y0) = (x0 - 1, y0 - 1);
    let (w, h) = ((x1 + 2 - x0) as usize, (y1 + 2 - y0) as usize);
    let at = |x: i32, y: i32| (y - y0) as usize * w + (x - x0) as usize;
    let mut occ = vec![false; w * h];
    for v in vertices {
        occ[at(v.coord(0), v.coord(1))] = true;
    }
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    outside[0] = true;
    queue.push_back((x0, y0));
    while let Some((x, y)) = queue.pop_front() {
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            if nx < x0 || ny < y0 || nx >= x0 + w as i32 || ny >= y0 + h as i32 {
                continue;
            }
            let i = at(nx, ny);
            if !occ[i] && !outside[i] {
                outside[i] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    // Corners on the doubled lattice, deduplicated.
    let mut corners: FxHashSet<(i32, i32)> = FxHashSet::default();
    for v in vertices {
        let (x, y) = (v.coord(0), v.coord(1));
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (nx, ny) = (x + dx, y + dy);
            let ext = nx < x0 || ny < y0 || nx >= x0 + w as i32 || ny >= y0 + h as i32 || outside[at(nx, ny)];
            if !ext {
                continue;
            }
            let (cx, cy) = (2 * x + dx, 2 * y + dy);
            if dx != 0 {
                corners.insert((cx, cy - 1));
                corners.insert((cx, cy + 1));
            } else {
                corners.insert((cx - 1, cy));
                corners.insert((cx + 1, cy));
            }
        }
    }
    let mut pts: Vec<(f64, f64)> = corners.into_iter().map(|(a, b)| (a as f64 / 2.0, b as f64 / 2.0)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(pts)
}

fn point_segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((p.0 - a.0 - t * dx).powi(2) + (p.1 - a.1 - t * dy).powi(2)).sqrt()
}

/// Symmetric Hausdorff distance between a point set and a closed polygon.
/// The polygon side is sampled at spacing `spacing`.
pub fn hausdorff_points_polygon(points: &[(f64, f64)], polygon: &[(f64, f64)], spacing: f64) -> f64 {
    let n = polygon.len();
    let seg = |i: usize| (polygon[i], polygon[(i + 1) % n]);
    let forward = points
        .par_iter()
        .map(|&p| (0..n).map(|i| point_segment_distance(p, seg(i).0, seg(i).1)).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max);
    let mut samples = Vec::new();
    for i in 0..n {
        let (a, b) = seg(i);
        let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
        let k = ((len / spacing).ceil() as usize).max(1);
        for j in 0..k {
            let t = j as f64 / k as f64;
            samples.push((a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1)));
        }
    }
    let backward = samples
        .par_iter()
        .map(|&s| points.iter().map(|p| ((p.0 - s.0).powi(2) + (p.1 - s.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
        .reduce(|| 0.0, f64::max);
    forward.max(backward)
}

/// Symmetric Hausdorff distance between two finite point sets.
pub fn hausdorff_points(a: &[(f64, f64)], b: &[(f64, f64)]) -> f64 {
    let one = |x: &[(f64, f64)], y: &[(f64, f64)]| {
        x.par_iter()
            .map(|p| y.iter().map(|q| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt()).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max)
    };
    one(a, b).max(one(b, a))
}

// ---------------------------------------------------------------------------
// Limit shape

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeReport {
    pub times: Vec<f64>,
    /// Mean over replicates of the Hausdorff distance between the rescaled
    /// cluster boundary and the reference.
    pub distances: Vec<f64>,
    pub distance_ci: Vec<(f64, f64)>,
    pub per_replicate: Vec<Vec<f64>>,
    /// Mean Hausdorff distance between consecutive rescaled checkpoints.
    pub successive: Vec<f64>,
    /// Slope of log distance against log time.
    pub slope: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub reference_directions: Vec<Vec<f64>>,
    pub reference_radii: Vec<f64>,
    pub provenance: Provenance,
}

impl Report for ShapeReport {
    fn csv(&self) -> String {
        let mut s = String::from("time,distance,ci_low,ci_high,successive\n");
        for (i, t) in self.times.iter().enumerate() {
            let succ = if i == 0 { String::new() } else { format!("{:?}", self.successive[i - 1]) };
            let _ = writeln!(
                s,
                "{t:?},{:?},{:?},{:?},{succ}",
                self.distances[i], self.distance_ci[i].0, self.distance_ci[i].1
            );
        }
        s
    }
}

fn fit_slope(times: &[f64], values: &[f64]) -> Option<f64> {
    if times.len() < 2 || values.iter().any(|&v| !(v > 0.0)) {
        return None;
    }
    let x: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    Some(linear_fit(&x, &y).0)
}

/// Rescaled outer boundary of each checkpoint for one replicate.
fn rescaled_boundaries(config: &RunConfig, times: &[f64]) -> Result<Vec<Vec<(f64, f64)>>> {
    let alpha = config.weight.alpha;
    let mut cfg = config.clone();
    cfg.stop_rule = StopRule::Time { t: *times.last().unwrap() };
    cfg.snapshot_schedule = times.iter().map(|&t| Checkpoint::Time { t }).collect();
    let run = run_fpp(&cfg)?;
    if run.snapshots.len() != times.len() {
        return Err(Error::Precondition("run ended before the last checkpoint".into()));
    }
    run.snapshots
        .iter()
        .zip(times)
        .map(|(snap, &t)| {
            let scale = t.powf(1.0 / (1.0 - alpha));
            let verts: Vec<Vertex> = run.final_state.snapshot_vertices(snap).iter().map(|(v, _)| *v).collect();
            Ok(outer_boundary_points(&verts)?
                .into_iter()
                .map(|(x, y)| (x / scale, y / scale))
                .collect())
        })
        .collect()
}

/// The reference D-ball for a limit-shape run.
pub fn reference_ball(spec: &ExperimentSpec) -> Result<(DBall, Vec<String>)> {
    let f = &spec.engine_config.weight;
    let mut notes = Vec::new();
    let mu = match &spec.reference {
        ShapeReference::DBall { mu } => mu.clone(),
        ShapeReference::MuHat { replicates, time } => {
            let bins = spec.bins.div_ceil(8) * 8;
            let est = estimate_mu(*replicates, *time, replicate_seed(spec.engine_config.seed, u64::MAX), bins)?;
            notes.push(format!("mu estimated from {replicates} standard FPP clusters at t = {time}"));
            est.norm()?
        }
    };
    Ok((trace_d_ball(f, &mu, 1.0, spec.bins)?, notes))
}

pub fn run_limit_shape(spec: &ExperimentSpec) -> Result<ShapeReport> {
    spec.validate()?;
    let f = &spec.engine_config.weight;
    if !(f.alpha < 1.0) {
        return Err(Error::Precondition("limit shapes need alpha < 1".into()));
    }
    if f.dim != 2 {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    if spec.times.is_empty() {
        return Err(Error::Precondition("at least one checkpoint time is needed".into()));
    }
    let (ball, notes) = reference_ball(spec)?;
    let polygon: Vec<(f64, f64)> = ball.boundary_polyline().iter().map(|p| (p[0], p[1])).collect();
    let seeds = spec.seeds();
    let t_last = *spec.times.last().unwrap();
    let spacing = 0.25 / t_last.powf(1.0 / (1.0 - f.alpha));
    let per: Vec<(Vec<f64>, Vec<f64>)> = seeds
        .par_iter()
        .map(|&seed| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut cfg = spec.engine_config.clone();
            cfg.seed = seed;
            let bounds = rescaled_boundaries(&cfg, &spec.times)?;
            let d = bounds.iter().map(|b| hausdorff_points_polygon(b, &polygon, spacing)).collect();
            let s = bounds.windows(2).map(|w| hausdorff_points(&w[0], &w[1])).collect();
            Ok((d, s))
        })
        .collect::<Result<_>>()?;
    let nt = spec.times.len();
    let per_replicate: Vec<Vec<f64>> = per.iter().map(|p| p.0.clone()).collect();
    let distances: Vec<f64> = (0..nt).map(|i| mean(per_replicate.iter().map(|r| r[i]))).collect();
    let successive: Vec<f64> = (0..nt.saturating_sub(1)).map(|i| mean(per.iter().map(|p| p.1[i]))).collect();
    let n = per_replicate.len();
    let distance_ci: Vec<(f64, f64)> = (0..nt)
        .map(|i| {
            bootstrap_ci(n, spec.bootstrap_resamples, spec.engine_config.seed ^ i as u64, distances[i], |idx| {
                Some(mean(idx.iter().map(|&j| per_replicate[j][i])))
            })
        })
        .collect();
    let slope = fit_slope(&spec.times, &distances);
    let slope_ci = slope.map(|s| {
        bootstrap_ci(n, spec.bootstrap_resamples, spec.engine_config.seed.wrapping_add(1), s, |idx| {
            let d: Vec<f64> = (0..nt).map(|i| mean(idx.iter().map(|&j| per_replicate[j][i]))).collect();
            fit_slope(&spec.times, &d)
        })
    });
    let mut prov = Provenance::new(spec, seeds);
    prov.grid_step = Some(ball.grid_step);
    prov.quadrature_nodes = Some(EDGE_QUAD_NODES);
    prov.bisection_tol = Some(BALL_BISECTION_TOL);
    prov.bootstrap_resamples = Some(spec.bootstrap_resamples);
    prov.notes = notes;
    Ok(ShapeReport {
        times: spec.times.clone(),
        distances,
        distance_ci,
        per_replicate,
        successive,
        slope,
        slope_ci,
        reference_directions: ball.directions,
        reference_radii: ball.radii,
        provenance: prov,
    })
}

// ---------------------------------------------------------------------------
// Covering

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoveringReport {
    pub alpha: f64,
    pub radii: Vec<usize>,
    pub radius_factor: f64,
    /// Fraction of replicates whose cluster at the exit time from the ball of
    /// radius R n contains every lattice point with n - 1 < |v| <= n.
    pub swallow_fraction: Vec<f64>,
    pub per_replicate: Vec<Vec<bool>>,
    pub condition_threshold: Option<f64>,
    pub condition_holds: Option<bool>,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl Report for CoveringReport {
    fn csv(&self) -> String {
        let mut s = String::from("n,swallow_fraction\n");
        for (n, f) in self.radii.iter().zip(&self.swallow_fraction) {
            let _ = writeln!(s, "{n},{f:?}");
        }
        s
    }
}

fn annulus_points(n: usize) -> Vec<Vertex> {
    let n = n as i32;
    let mut out = Vec::new();
    for x in -n..=n {
        for y in -n..=n {
            let r2 = x * x + y * y;
            if r2 > (n - 1) * (n - 1) && r2 <= n * n {
                out.push(Vertex::new(&[x, y]).unwrap());
            }
        }
    }
    out
}

/// Swallow indicator per annulus index for one FPP run.
pub fn covering_indicators(config: &RunConfig, radii: &[usize], radius_factor: f64) -> Result<Vec<bool>> {
    let r_max = radius_factor * *radii.last().unwrap() as f64;
    let mut cfg = config.clone();
    cfg.stop_rule = StopRule::EuclidRadius { r: r_max };
    let run = run_fpp(&cfg)?;
    let log = &run.final_state.vertex_log;
    let order: FxHashMap<Vertex, usize> = log.iter().enumerate().map(|(i, (v, _))| (*v, i)).collect();
    Ok(radii
        .iter()
        .map(|&n| {
            let r = radius_factor * n as f64;
            let exit = log
                .iter()
                .position(|(v, _)| v.euclidean_norm() > r)
                .unwrap_or(log.len());
            annulus_points(n).iter().all(|v| order.get(v).is_some_and(|&i| i < exit))
        })
        .collect())
}

pub fn run_covering(spec: &ExperimentSpec) -> Result<CoveringReport> {
    spec.validate()?;
    let f = &spec.engine_config.weight;
    if f.dim != 2 {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    if spec.radii.is_empty() || spec.radii[0] == 0 {
        return Err(Error::Precondition("covering needs annulus indices n >= 1".into()));
    }
    if !(spec.radius_factor >= 1.0) {
        return Err(Error::Precondition("radius_factor must be at least 1".into()));
    }
    let mut warnings = Vec::new();
    let (mut threshold, mut holds) = (None, None);
    if f.alpha >= 1.0 {
        let shape = compute_shape_constants(&NormSpec::Euclidean, 2, 256)?;
        let lambda = compute_lambda(f, &NormSpec::Euclidean, 256)?.value;
        let t = alpha_near_1_threshold(shape.rho_upper, f.kappa_upper, lambda);
        let ok = check_alpha_near_1_condition(f.alpha, shape.rho_upper, f.kappa_upper, lambda);
        if !ok {
            warnings.push(format!("alpha = {} is outside [1, {t}); the run proceeds anyway", f.alpha));
        }
        threshold = Some(t);
        holds = Some(ok);
    }
    let seeds = spec.seeds();
    let per_replicate: Vec<Vec<bool>> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = spec.engine_config.clone();
            cfg.seed = seed;
            covering_indicators(&cfg, &spec.radii, spec.radius_factor)
        })
        .collect::<Result<_>>()?;
    let swallow_fraction = (0..spec.radii.len())
        .map(|i| per_replicate.iter().filter(|r| r[i]).count() as f64 / per_replicate.len() as f64)
        .collect();
    Ok(CoveringReport {
        alpha: f.alpha,
        radii: spec.radii.clone(),
        radius_factor: spec.radius_factor,
        swallow_fraction,
        per_replicate,
        condition_threshold: threshold,
        condition_holds: holds,
        warnings,
        provenance: Provenance::new(spec, seeds),
    })
}

// ---------------------------------------------------------------------------
// Cone

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConeReport {
    pub alpha: f64,
    pub aspect: f64,
    pub edges: usize,
    pub tail_fraction: f64,
    pub containment_threshold: f64,
    pub per_run: Vec<ConeStats>,
    /// Whether the tail lies at least `containment_threshold` inside one of
    /// the two cones.
    pub contained: Vec<bool>,
    pub containment_fraction: f64,
    pub conditions: ConeConditions,
    pub notes: Vec<String>,
    pub provenance: Provenance,
}

impl Report for ConeReport {
    fn csv(&self) -> String {
        let mut s = String::from("run,seed,in_k,in_neg_k,outside_both,total,contained\n");
        for (i, (st, c)) in self.per_run.iter().zip(&self.contained).enumerate() {
            let _ = writeln!(
                s,
                "{i},{},{:?},{:?},{},{},{c}",
                self.provenance.replicate_seeds[i], st.in_k, st.in_neg_k, st.outside_both, st.total
            );
        }
        s
    }
}

/// Cone containment for the weight `kappa * nu_s^alpha`.
pub fn run_cone(spec: &ExperimentSpec) -> Result<ConeReport> {
    spec.validate()?;
    let cyl = spec
        .cylinder
        .clone()
        .ok_or_else(|| Error::Precondition("cone experiments need a cylinder".into()))?;
    let f = &spec.engine_config.weight;
    if !(f.alpha > 1.0) {
        return Err(Error::Precondition("cone experiments need alpha > 1".into()));
    }
    if cyl.dim() != f.dim {
        return Err(Error::Precondition("cylinder and weight dimensions differ".into()));
    }
    let (ku, kl) = match &f.profile {
        crate::weights::SphereProfile::Admissible(a) => (a.kappa_upper_s(), a.kappa_lower_s()),
        _ => {
            return Err(Error::Precondition(
                "cone experiments need an admissible cylinder profile".into(),
            ))
        }
    };
    let conditions = check_cone_conditions(f.alpha, cyl.aspect, ku, kl)?;
    let cone = ConeSpec::new(cyl.clone());
    let seeds = spec.seeds();
    let per_run: Vec<ConeStats> = seeds
        .par_iter()
        .map(|&seed| {
            let mut cfg = spec.engine_config.clone();
            cfg.seed = seed;
            cfg.stop_rule = StopRule::EdgeCount { n: spec.edges };
            let run = run_fpp(&cfg)?;
            classify_vertices(&run.final_state.vertex_log, &cone, spec.tail_fraction)
        })
        .collect::<Result<_>>()?;
    let contained: Vec<bool> = per_run
        .iter()
        .map(|s| s.in_k.max(s.in_neg_k) >= spec.containment_threshold)
        .collect();
    let containment_fraction = contained.iter().filter(|&&c| c).count() as f64 / contained.len() as f64;
    Ok(ConeReport {
        alpha: f.alpha,
        aspect: cyl.aspect,
        edges: spec.edges,
        tail_fraction: spec.tail_fraction,
        containment_threshold: spec.containment_threshold,
        per_run,
        contained,
        containment_fraction,
        conditions,
        notes: vec!["the containment and run-fraction thresholds are experiment choices, not derived rates".into()],
        provenance: Provenance::new(spec, seeds),
    })
}

/// Engine config for `kappa * nu_s^alpha` on the standard cylinder with the
/// given axis and aspect.
pub fn cone_engine_config(axis: Vec<f64>, aspect: f64, alpha: f64, kappa: f64, seed: u64, edges: usize) -> Result<(RunConfig, CylinderNorm)> {
    let cyl = CylinderNorm::standard(axis, 1.0, aspect)?;
    let weight = AdmissibleProfile::constant(cyl.clone(), alpha, kappa)?.weight()?;
    Ok((RunConfig::new(weight, seed, StopRule::EdgeCount { n: edges }), cyl))
}

// ---------------------------------------------------------------------------
// Urn

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UrnReport {
    pub steps: usize,
    pub replicates: usize,
    /// Law of the number of right absorptions, indexed 0..=steps.
    pub empirical: Vec<f64>,
    pub exact: Vec<f64>,
    pub total_variation: f64,
    pub provenance: Provenance,
}

impl Report for UrnReport {
    fn csv(&self) -> String {
        let mut s = String::from("right_count,empirical,exact\n");
        for (k, (e, x)) in self.empirical.iter().zip(&self.exact).enumerate() {
            let _ = writeln!(s, "{k},{e:?},{x:?}");
        }
        s
    }
}

/// Exact law of the right-absorption count after `n` steps when the right
/// end is chosen with probability `(k_R + 1/2) / (k_R + k_L + 1)`.
pub fn urn_exact_law(n: usize) -> Vec<f64> {
    let mut p = vec![1.0];
    for step in 0..n {
        let mut q = vec![0.0; step + 2];
        for (kr, &mass) in p.iter().enumerate() {
            let kl = step - kr;
            let right = (kr as f64 + 0.5) / (kr + kl + 1) as f64;
            q[kr + 1] += mass * right;
            q[kr] += mass * (1.0 - right);
        }
        p = q;
    }
    p
}

pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    0.5 * (0..n)
        .map(|i| (a.get(i).copied().unwrap_or(0.0) - b.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

pub fn run_urn_d1(spec: &ExperimentSpec) -> Result<UrnReport> {
    spec.validate()?;
    let f = &spec.engine_config.weight;
    if f.dim != 1 {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    if f.alpha != 1.0 || f.kappa_upper != f.kappa_lower {
        return Err(Error::Precondition("the urn needs f(z) = c |z|".into()));
    }
    if spec.steps == 0 {
        return Err(Error::Precondition("the urn needs at least one step".into()));
    }
    let seeds = spec.seeds();
    let counts: Vec<usize> = seeds
        .par_iter()
        .map(|&seed| -> Result<usize> {
            let mut cfg = spec.engine_config.clone();
            cfg.seed = seed;
            cfg.stop_rule = StopRule::EdgeCount { n: spec.steps };
            cfg.holding_times = false;
            let run = run_eden_chain(&cfg)?;
            Ok(run.final_state.vertex_log.iter().filter(|(v, _)| v.coord(0) > 0).count())
        })
        .collect::<Result<_>>()?;
    let mut empirical = vec![0.0; spec.steps + 1];
    for c in &counts {
        empirical[*c] += 1.0 / counts.len() as f64;
    }
    let exact = urn_exact_law(spec.steps);
    Ok(UrnReport {
        steps: spec.steps,
        replicates: counts.len(),
        total_variation: total_variation(&empirical, &exact),
        empirical,
        exact,
        provenance: Provenance::new(spec, seeds),
    })
}

// ---------------------------------------------------------------------------
// Fluctuation exponent

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChiReport {
    pub times: Vec<f64>,
    /// Mean over replicates of the largest radial deviation from the
    /// replicate mean, per time.
    pub widths: Vec<f64>,
    pub chi: f64,
    pub intercept: f64,
    pub chi_ci: (f64, f64),
    pub provenance: Option<Provenance>,
}

impl Report for ChiReport {
    fn csv(&self) -> String {
        let mut s = String::from("time,width\n");
        for (t, w) in self.times.iter().zip(&self.widths) {
            let _ = writeln!(s, "{t:?},{w:?}");
        }
        s
    }
}

/// Largest radial deviation of each replicate from the replicate mean.
/// `radii[rep][bin]`.
pub fn radial_widths(radii: &[Vec<f64>]) -> Vec<f64> {
    let bins = radii[0].len();
    let m: Vec<f64> = (0..bins).map(|b| mean(radii.iter().map(|r| r[b]))).collect();
    radii
        .iter()
        .map(|r| r.iter().zip(&m).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
        .collect()
}

/// Fit `width ~ c t^-chi` from per-replicate widths `widths[rep][time]`.
pub fn fit_chi(times: &[f64], widths: &[Vec<f64>], resamples: usize, seed: u64) -> Result<ChiReport> {
    if times.len() < 4 || !(times[times.len() - 1] / times[0] >= 100.0) {
        return Err(Error::InsufficientSample(
            "estimating chi needs at least 4 times spanning 2 decades".into(),
        ));
    }
    if !strictly_increasing(times) || widths.is_empty() || widths.iter().any(|w| w.len() != times.len()) {
        return Err(Error::Precondition("width table does not match the times".into()));
    }
    let nt = times.len();
    let means = |idx: &[usize]| -> Vec<f64> { (0..nt).map(|i| mean(idx.iter().map(|&j| widths[j][i]))).collect() };
    let all: Vec<usize> = (0..widths.len()).collect();
    let w = means(&all);
    let fit = |w: &[f64]| -> Option<(f64, f64)> {
        if w.iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        let x: Vec<f64> = times.iter().map(|t| t.ln()).collect();
        let y: Vec<f64> = w.iter().map(|v| v.ln()).collect();
        let (s, c) = linear_fit(&x, &y);
        Some((-s, c))
    };
    let (chi, intercept) = fit(&w).ok_or_else(|| Error::InsufficientSample("a width is zero".into()))?;
    let chi_ci = bootstrap_ci(widths.len(), resamples, seed, chi, |idx| fit(&means(idx)).map(|p| p.0));
    Ok(ChiReport {
        times: times.to_vec(),
        widths: w,
        chi,
        intercept,
        chi_ci,
        provenance: None,
    })
}

/// Exponent of the shape fluctuations from real runs.
pub fn estimate_chi(spec: &ExperimentSpec) -> Result<ChiReport> {
    spec.validate()?;
    let f = &spec.engine_config.weight;
    if !(f.alpha < 1.0) {
        return Err(Error::Precondition("estimating chi needs alpha < 1".into()));
    }
    if f.dim != 2 {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    if spec.replicates < 2 {
        return Err(Error::InsufficientSample("estimating chi needs at least 2 replicates".into()));
    }
    if spec.times.len() < 4 || !(spec.times[spec.times.len() - 1] / spec.times[0] >= 100.0) {
        return Err(Error::InsufficientSample(
            "estimating chi needs at least 4 times spanning 2 decades".into(),
        ));
    }
    let angles = bin_angles(spec.bins);
    let seeds = spec.seeds();
    let t_last = *spec.times.last().unwrap();
    // radii[rep][time][bin]
    let radii: Vec<Vec<Vec<f64>>> = seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<Vec<f64>>> {
            let mut cfg = spec.engine_config.clone();
            cfg.seed = seed;
            cfg.stop_rule = StopRule::Time { t: t_last };
            cfg.snapshot_schedule = spec.times.iter().map(|&t| Checkpoint::Time { t }).collect();
            let run = run_fpp(&cfg)?;
            Ok(run
                .snapshots
                .iter()
                .zip(&spec.times)
                .map(|(s, &t)| {
                    let scale = t.powf(1.0 / (1.0 - f.alpha));
                    cluster_radii(run.final_state.snapshot_vertices(s), &angles, scale)
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    let nt = spec.times.len();
    let per_time: Vec<Vec<f64>> = (0..nt)
        .map(|i| {
            let table: Vec<Vec<f64>> = radii.iter().map(|r| r[i].clone()).collect();
            radial_widths(&table)
        })
        .collect();
    let widths: Vec<Vec<f64>> = (0..seeds.len()).map(|j| per_time.iter().map(|w| w[j]).collect()).collect();
    let mut rep = fit_chi(&spec.times, &widths, spec.bootstrap_resamples, spec.engine_config.seed)?;
    let mut prov = Provenance::new(spec, seeds);
    prov.bootstrap_resamples = Some(spec.bootstrap_resamples);
    prov.notes.push("the exponent is informational; no target value is asserted".into());
    rep.provenance = Some(prov);
    Ok(rep)
}

// ---------------------------------------------------------------------------
// mu estimate

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MuReport {
    pub time: f64,
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
    pub raw_radii: Vec<f64>,
    pub convex: bool,
    pub provenance: Provenance,
}

impl Report for MuReport {
    fn csv(&self) -> String {
        let mut s = String::from("angle,value\n");
        for (a, r) in self.angles.iter().zip(&self.radii) {
            let _ = writeln!(s, "{a:?},{r:?}");
        }
        s
    }
}

pub fn run_mu_estimate(spec: &ExperimentSpec) -> Result<MuReport> {
    spec.validate()?;
    let t = *spec
        .times
        .first()
        .ok_or_else(|| Error::Precondition("mu_estimate needs one time".into()))?;
    let est = estimate_mu(spec.replicates, t, spec.engine_config.seed, spec.bins)?;
    let convex = est.is_convex(1e-9);
    let mut prov = Provenance::new(spec, est.seeds.clone());
    prov.alpha = 0.0;
    Ok(MuReport {
        time: t,
        angles: est.angles,
        radii: est.radii,
        raw_radii: est.raw_radii,
        convex,
        provenance: prov,
    })
}

/// Weight `|z|^alpha` in the given dimension.
pub fn radial_weight(alpha: f64, dim: usize) -> Result<AlphaWeightFunction> {
    AlphaWeightFunction::constant(alpha, 1.0, dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn urn_law_examples() {
        assert_eq!(urn_exact_law(1), vec![0.5, 0.5]);
        let p = urn_exact_law(2);
        assert!((p[2] - 3.0 / 8.0).abs() < 1e-15);
        assert!((p[0] - 3.0 / 8.0).abs() < 1e-15);
        assert!((p[1] - 0.25).abs() < 1e-15);
        for n in 0..=64 {
            let s: f64 = urn_exact_law(n).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    /// Brute-force enumeration of all left/right sequences.
    #[test]
    fn urn_law_matches_enumeration() {
        let n = 10;
        let mut law = vec![0.0; n + 1];
        for mask in 0u32..(1 << n) {
            let (mut kr, mut kl, mut p) = (0usize, 0usize, 1.0);
            for i in 0..n {
                let right = (kr as f64 + 0.5) / (kr + kl + 1) as f64;
                if mask >> i & 1 == 1 {
                    p *= right;
                    kr += 1;
                } else {
                    p *= 1.0 - right;
                    kl += 1;
                }
            }
            law[kr] += p;
        }
        for (a, b) in law.iter().zip(urn_exact_law(n)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn urn_small_n() {
        let f = radial_weight(1.0, 1).unwrap();
        let mut spec = ExperimentSpec::new(ExperimentKind::UrnD1, RunConfig::new(f, 3, StopRule::EdgeCount { n: 1 }), 4000);
        spec.steps = 2;
        let r = run_urn_d1(&spec).unwrap();
        assert!((r.exact[2] - 0.375).abs() < 1e-15);
        assert!(r.total_variation < 0.03, "{r:?}");
        let g = radial_weight(1.0, 2).unwrap();
        spec.engine_config = RunConfig::new(g, 3, StopRule::EdgeCount { n: 1 });
        assert!(matches!(run_urn_d1(&spec), Err(Error::UnsupportedDimension(2))));
    }

    #[test]
    fn outer_boundary_of_a_square() {
        let mut v = Vec::new();
        for x in -1..=1 {
            for y in -1..=1 {
                if (x, y) != (0, 0) {
                    v.push(Vertex::new(&[x, y]).unwrap());
                }
            }
        }
        // The hole at the origin is not on the outer boundary.
        let pts = outer_boundary_points(&v).unwrap();
        assert_eq!(pts.len(), 12);
        assert!(pts.iter().all(|p| p.0.abs() == 1.5 || p.1.abs() == 1.5));
        let one = outer_boundary_points(&[Vertex::new(&[0, 0]).unwrap()]).unwrap();
        assert_eq!(one.len(), 4);
    }

    #[test]
    fn hausdorff_examples() {
        let sq = vec![(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
        let pts = vec![(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
        // Side midpoints are 1 from the nearest corner.
        assert!((hausdorff_points_polygon(&pts, &sq, 0.01) - 1.0).abs() < 1e-9);
        let big: Vec<(f64, f64)> = sq.iter().map(|p| (2.0 * p.0, 2.0 * p.1)).collect();
        assert!((hausdorff_points(&sq, &big) - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn chi_synthetic_oracles() {
        let times = [10.0f64, 40.0, 160.0, 640.0, 2560.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut table = Vec::new();
        for _ in 0..40 {
            // Boundary radii 1 + noise t^-1/2 on 32 bins, width per time.
            let radii: Vec<Vec<Vec<f64>>> = times
                .iter()
                .map(|t| {
                    (0..20)
                        .map(|_| (0..32).map(|_| 1.0 + t.powf(-0.5) * crate::numeric::standard_normal(&mut rng)).collect())
                        .collect()
                })
                .collect();
            table.push(radii);
        }
        let widths: Vec<Vec<f64>> = table
            .iter()
            .map(|per_t| per_t.iter().map(|reps| mean(radial_widths(reps))).collect())
            .collect();
        let r = fit_chi(&times, &widths, 200, 1).unwrap();
        assert!((r.chi - 0.5).abs() < 0.05, "{}", r.chi);
        assert!(r.chi_ci.0 <= r.chi && r.chi <= r.chi_ci.1);

        let flat: Vec<Vec<f64>> = (0..30)
            .map(|_| times.iter().map(|_| 0.3 + 0.01 * rng.random::<f64>()).collect())
            .collect();
        let r = fit_chi(&times, &flat, 200, 2).unwrap();
        assert!(r.chi.abs() < 0.05);
        assert!(matches!(
            fit_chi(&times[..3], &[vec![1.0; 3]], 10, 0),
            Err(Error::InsufficientSample(_))
        ));
        assert!(fit_chi(&[1.0, 2.0, 3.0, 50.0], &[vec![1.0; 4]], 10, 0).is_err());
    }

    #[test]
    fn covering_unit_annulus_and_standard_fpp() {
        let f = radial_weight(0.0, 2).unwrap();
        let mut spec = ExperimentSpec::new(ExperimentKind::Covering, RunConfig::new(f, 11, StopRule::EdgeCount { n: 1 }), 10);
        spec.radii = vec![1, 3, 6];
        let r = run_covering(&spec).unwrap();
        assert_eq!(r.swallow_fraction, vec![1.0, 1.0, 1.0]);
        assert!(r.condition_holds.is_none());
        assert_eq!(annulus_points(1).len(), 4);
    }

    #[test]
    fn spec_validation() {
        let f = radial_weight(0.0, 2).unwrap();
        let mut spec = ExperimentSpec::new(ExperimentKind::LimitShape, RunConfig::new(f, 1, StopRule::EdgeCount { n: 1 }), 1);
        spec.times = vec![10.0, 5.0];
        assert!(spec.validate().is_err());
        spec.times = vec![5.0];
        spec.replicates = 0;
        assert!(spec.validate().is_err());
        let text = serde_json::to_string(&ExperimentSpec { replicates: 2, ..spec.clone() }).unwrap();
        let back: ExperimentSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(back.replicates, 2);
        let bad = text.replacen("\"replicates\"", "\"replicatez\"", 1);
        let err = serde_json::from_str::<ExperimentSpec>(&bad).unwrap_err().to_string();
        assert!(err.contains("replicatez"), "{err}");
    }

    #[test]
    fn limit_shape_single_time_has_no_slope() {
        let f = radial_weight(0.0, 2).unwrap();
        let mut spec = ExperimentSpec::new(ExperimentKind::LimitShape, RunConfig::new(f, 2, StopRule::EdgeCount { n: 1 }), 2);
        spec.times = vec![5.0];
        spec.bins = 32;
        let r = run_limit_shape(&spec).unwrap();
        assert_eq!(r.distances.len(), 1);
        assert!(r.slope.is_none() && r.successive.is_empty());
        assert!(r.distances[0] > 0.0);
        assert!(r.distance_ci[0].0 <= r.distances[0] && r.distances[0] <= r.distance_ci[0].1);
    }

    #[test]
    fn cone_tail_one_equals_direct_classification() {
        let (cfg, cyl) = cone_engine_config(vec![1.0, 0.0], 8.0, 3.0, 1.0, 4, 10).unwrap();
        let mut spec = ExperimentSpec::new(ExperimentKind::Cone, cfg.clone(), 1);
        spec.edges = 10;
        spec.tail_fraction = 1.0;
        spec.cylinder = Some(cyl.clone());
        let r = run_cone(&spec).unwrap();
        let mut c = cfg;
        c.seed = r.provenance.replicate_seeds[0];
        let run = run_fpp(&c).unwrap();
        let direct = classify_vertices(&run.final_state.vertex_log, &ConeSpec::new(cyl), 1.0).unwrap();
        assert_eq!(r.per_run[0], direct);
        assert!(r.conditions.pos_prob && r.conditions.almost_sure);
    }
}
