//! Alpha-weight functions `f(z) = |z|^alpha f0(z/|z|)`, the norms they are
//! built from, and the constants extracted from them.
//!
//! A [`SphereProfile`] is the restriction `f0` of `f` to the Euclidean unit
//! sphere. A [`NormSpec`] is a norm on `R^d`, either analytic or tabulated by
//! its boundary radius in the plane.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{AdmissibleProfile, CylinderNorm};
use crate::lattice::{edge_midpoint, Edge, MAX_DIM};
use crate::numeric::{self, euclid, golden_max};

// ---------------------------------------------------------------------------
// Norms

/// A norm on `R^d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NormSpec {
    Euclidean,
    L1,
    Linf,
    /// `factor * inner(z)`.
    Scaled { factor: f64, inner: Box<NormSpec> },
    Cylinder(CylinderNorm),
    Tabulated(TabulatedNorm),
}

impl NormSpec {
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            NormSpec::Euclidean => euclid(z),
            NormSpec::L1 => z.iter().map(|x| x.abs()).sum(),
            NormSpec::Linf => z.iter().fold(0.0, |m, x| f64::max(m, x.abs())),
            NormSpec::Scaled { factor, inner } => factor * inner.eval(z),
            NormSpec::Cylinder(c) => c.eval(z),
            NormSpec::Tabulated(t) => t.eval(z),
        }
    }

    /// Radius of the unit ball's boundary along the unit direction `u`.
    pub fn unit_ball_radius(&self, u: &[f64]) -> f64 {
        1.0 / self.eval(u)
    }

    /// Dimension the norm is tied to, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match self {
            NormSpec::Euclidean | NormSpec::L1 | NormSpec::Linf => None,
            NormSpec::Scaled { inner, .. } => inner.fixed_dim(),
            NormSpec::Cylinder(c) => Some(c.dim()),
            NormSpec::Tabulated(_) => Some(2),
        }
    }

    /// Exact `(min, max)` of the norm over the Euclidean unit sphere when
    /// known in closed form.
    fn sphere_range_exact(&self, dim: usize) -> Option<(f64, f64)> {
        let d = dim as f64;
        match self {
            NormSpec::Euclidean => Some((1.0, 1.0)),
            NormSpec::L1 => Some((1.0, d.sqrt())),
            NormSpec::Linf => Some((1.0 / d.sqrt(), 1.0)),
            NormSpec::Scaled { factor, inner } => inner
                .sphere_range_exact(dim)
                .map(|(lo, hi)| (factor * lo, factor * hi)),
            _ => None,
        }
    }

    /// `(min, max)` of the norm over the Euclidean unit sphere.
    pub fn sphere_range(&self, dim: usize) -> (f64, f64) {
        if let Some(r) = self.sphere_range_exact(dim) {
            return r;
        }
        sphere_extrema(dim, |u| self.eval(u))
    }

    /// Short textual forms accepted on the command line: `euclidean`, `l1`,
    /// `linf`, and `<factor>*<norm>` for a scaled norm.
    pub fn parse(text: &str) -> Result<Self> {
        let t = text.trim();
        if let Some((factor, inner)) = t.split_once('*') {
            let factor: f64 = factor
                .trim()
                .parse()
                .map_err(|_| Error::Parse(format!("bad norm scale factor in '{text}'")))?;
            if !(factor > 0.0 && factor.is_finite()) {
                return Err(Error::Parse(format!("norm scale must be positive in '{text}'")));
            }
            return Ok(NormSpec::Scaled {
                factor,
                inner: Box::new(NormSpec::parse(inner)?),
            });
        }
        match t {
            "euclidean" | "l2" => Ok(NormSpec::Euclidean),
            "l1" => Ok(NormSpec::L1),
            "linf" => Ok(NormSpec::Linf),
            _ => Err(Error::Parse(format!("unknown norm '{text}'"))),
        }
    }
}

/// A planar norm given by boundary radii of its unit ball at a list of
/// angles. The unit ball is the polygon through the tabulated boundary
/// points, so a convex table yields an exact norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedNorm {
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
}

impl TabulatedNorm {
    pub fn new(angles: Vec<f64>, radii: Vec<f64>) -> Result<Self> {
        validate_angle_table(&angles, &radii)?;
        Ok(TabulatedNorm { angles, radii })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let (a, r) = read_angle_table(path)?;
        TabulatedNorm::new(a, r)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_angle_table(path, &self.angles, &self.radii)
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        let (x, y) = (z[0], z[1]);
        if x == 0.0 && y == 0.0 {
            return 0.0;
        }
        let (i, j) = sector(&self.angles, angle_of(x, y));
        let (pi, pj) = (self.point(i), self.point(j));
        // Outward normal of the polygon side through pi, pj.
        let nx = pj.1 - pi.1;
        let ny = -(pj.0 - pi.0);
        let c = nx * pi.0 + ny * pi.1;
        (nx * x + ny * y) / c
    }

    fn point(&self, i: usize) -> (f64, f64) {
        let a = self.angles[i];
        (self.radii[i] * a.cos(), self.radii[i] * a.sin())
    }
}

fn angle_of(x: f64, y: f64) -> f64 {
    let a = y.atan2(x);
    if a < 0.0 {
        a + 2.0 * PI
    } else {
        a
    }
}

/// Indices `(i, j)` of the table entries bracketing angle `a`, wrapping
/// around `2 pi`.
fn sector(angles: &[f64], a: f64) -> (usize, usize) {
    let n = angles.len();
    let k = angles.partition_point(|&t| t <= a);
    if k == 0 || k == n {
        (n - 1, 0)
    } else {
        (k - 1, k)
    }
}

fn validate_angle_table(angles: &[f64], values: &[f64]) -> Result<()> {
    if angles.len() != values.len() || angles.len() < 3 {
        return Err(Error::Parse(
            "angle table needs at least 3 rows of matching length".into(),
        ));
    }
    for w in angles.windows(2) {
        if !(w[1] > w[0]) {
            return Err(Error::Parse("angles must be strictly increasing".into()));
        }
    }
    if angles[0] < 0.0 || *angles.last().unwrap() >= 2.0 * PI {
        return Err(Error::Parse("angles must lie in [0, 2pi)".into()));
    }
    if values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::Parse("tabulated values must be positive and finite".into()));
    }
    Ok(())
}

/// Header line of every angle table CSV.
pub const ANGLE_TABLE_HEADER: &str = "angle,value";

/// Read `angle,value` rows (angles in radians).
pub fn read_angle_table(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let file = std::fs::File::open(path)?;
    let mut lines = std::io::BufReader::new(file).lines();
    let header = loop {
        match lines.next() {
            Some(l) => {
                let l = l?;
                if !l.trim().is_empty() {
                    break l;
                }
            }
            None => return Err(Error::Parse(format!("{}: empty table", path.display()))),
        }
    };
    if header.trim() != ANGLE_TABLE_HEADER {
        return Err(Error::Parse(format!(
            "{}: expected header '{ANGLE_TABLE_HEADER}', found '{}'",
            path.display(),
            header.trim()
        )));
    }
    let (mut angles, mut values) = (Vec::new(), Vec::new());
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let mut next = || -> Result<f64> {
            parts
                .next()
                .and_then(|p| p.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("{}: bad row {}", path.display(), n + 2)))
        };
        angles.push(next()?);
        values.push(next()?);
    }
    Ok((angles, values))
}

pub fn write_angle_table(path: &Path, angles: &[f64], values: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{ANGLE_TABLE_HEADER}")?;
    for (a, v) in angles.iter().zip(values) {
        writeln!(out, "{a:?},{v:?}")?;
    }
    out.flush()?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Sphere profiles

/// `f0`: a strictly positive Lipschitz function on the Euclidean unit sphere.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SphereProfile {
    Constant {
        value: f64,
    },
    /// `f0(u) = scale * norm(u)^exponent`.
    NormPower {
        norm: NormSpec,
        exponent: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    Tabulated(TabulatedProfile),
    Admissible(AdmissibleProfile),
}

fn one() -> f64 {
    1.0
}

impl SphereProfile {
    #[inline]
    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            SphereProfile::Constant { value } => *value,
            SphereProfile::NormPower {
                norm,
                exponent,
                scale,
            } => scale * norm.eval(u).powf(*exponent),
            SphereProfile::Tabulated(t) => t.eval(u),
            SphereProfile::Admissible(a) => a.sphere_value(u),
        }
    }

    /// Short textual forms: `const:<c>`, `norm:<norm>[:<exponent>]`
    /// (exponent defaults to the weight's alpha), `<norm>` alone as
    /// `norm:<norm>`.
    pub fn parse(text: &str, alpha: f64) -> Result<Self> {
        let t = text.trim();
        if let Some(c) = t.strip_prefix("const:") {
            let value: f64 = c
                .parse()
                .map_err(|_| Error::Parse(format!("bad constant profile '{text}'")))?;
            return Ok(SphereProfile::Constant { value });
        }
        let body = t.strip_prefix("norm:").unwrap_or(t);
        let (norm, exponent) = match body.rsplit_once(':') {
            Some((n, e)) => (
                NormSpec::parse(n)?,
                e.parse()
                    .map_err(|_| Error::Parse(format!("bad profile exponent in '{text}'")))?,
            ),
            None => (NormSpec::parse(body)?, alpha),
        };
        Ok(SphereProfile::NormPower {
            norm,
            exponent,
            scale: 1.0,
        })
    }
}

/// Planar profile tabulated at angles, linearly interpolated in angle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabulatedProfile {
    pub angles: Vec<f64>,
    pub values: Vec<f64>,
}

impl TabulatedProfile {
    pub fn new(angles: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        validate_angle_table(&angles, &values)?;
        Ok(TabulatedProfile { angles, values })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let (a, v) = read_angle_table(path)?;
        TabulatedProfile::new(a, v)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_angle_table(path, &self.angles, &self.values)
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        let a = angle_of(u[0], u[1]);
        let (i, j) = sector(&self.angles, a);
        let (ai, mut aj) = (self.angles[i], self.angles[j]);
        let mut a = a;
        if aj <= ai {
            aj += 2.0 * PI;
            if a < ai {
                a += 2.0 * PI;
            }
        }
        let w = (a - ai) / (aj - ai);
        self.values[i] * (1.0 - w) + self.values[j] * w
    }
}

// ---------------------------------------------------------------------------
// Alpha-weight functions

/// `f(z) = |z|^alpha f0(z/|z|)` together with `kappa_upper = sup f0`,
/// `kappa_lower = inf f0` and a Lipschitz constant of `f0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightSpec", into = "WeightSpec")]
pub struct AlphaWeightFunction {
    pub alpha: f64,
    pub profile: SphereProfile,
    pub dim: usize,
    pub kappa_upper: f64,
    pub kappa_lower: f64,
    pub lipschitz_bound: f64,
    /// Whether `lipschitz_bound` was supplied rather than estimated.
    pub lipschitz_declared: bool,
}

/// Serialized form of an [`AlphaWeightFunction`]; derived constants are
/// recomputed on load.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    pub alpha: f64,
    pub profile: SphereProfile,
    pub dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lipschitz_bound: Option<f64>,
}

impl TryFrom<WeightSpec> for AlphaWeightFunction {
    type Error = Error;
    fn try_from(s: WeightSpec) -> Result<Self> {
        let f = AlphaWeightFunction::new(s.alpha, s.profile, s.dim)?;
        Ok(match s.lipschitz_bound {
            Some(l) => f.with_lipschitz_bound(l),
            None => f,
        })
    }
}

impl From<AlphaWeightFunction> for WeightSpec {
    fn from(f: AlphaWeightFunction) -> Self {
        WeightSpec {
            alpha: f.alpha,
            profile: f.profile,
            dim: f.dim,
            lipschitz_bound: f.lipschitz_declared.then_some(f.lipschitz_bound),
        }
    }
}

impl AlphaWeightFunction {
    pub fn new(alpha: f64, profile: SphereProfile, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::UnsupportedDimension(dim));
        }
        if !alpha.is_finite() {
            return Err(Error::Precondition("alpha must be finite".into()));
        }
        check_profile_dim(&profile, dim)?;
        if let SphereProfile::Admissible(a) = &profile {
            a.validate()?;
            if a.alpha != alpha {
                return Err(Error::Precondition(format!(
                    "admissible profile built for alpha {} used with alpha {alpha}",
                    a.alpha
                )));
            }
        }
        let (lo, hi) = profile_range(&profile, dim);
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
            return Err(Error::Precondition(format!(
                "profile must be strictly positive and finite on the sphere (range [{lo}, {hi}])"
            )));
        }
        let lipschitz = estimate_profile_lipschitz(&profile, dim);
        Ok(AlphaWeightFunction {
            alpha,
            profile,
            dim,
            kappa_upper: hi,
            kappa_lower: lo,
            lipschitz_bound: lipschitz,
            lipschitz_declared: false,
        })
    }

    /// `f = c |z|^alpha`.
    pub fn constant(alpha: f64, value: f64, dim: usize) -> Result<Self> {
        Self::new(alpha, SphereProfile::Constant { value }, dim)
    }

    /// `f = norm^alpha`.
    pub fn norm_power(norm: NormSpec, alpha: f64, dim: usize) -> Result<Self> {
        Self::new(
            alpha,
            SphereProfile::NormPower {
                norm,
                exponent: alpha,
                scale: 1.0,
            },
            dim,
        )
    }

    pub fn with_lipschitz_bound(mut self, bound: f64) -> Self {
        self.lipschitz_bound = bound;
        self.lipschitz_declared = true;
        self
    }

    /// `f(z)`; fails at the origin.
    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(Error::Domain(format!(
                "point of dimension {} for a weight in dimension {}",
                z.len(),
                self.dim
            )));
        }
        if z.iter().all(|&x| x == 0.0) {
            return Err(Error::Domain("f is undefined at the origin".into()));
        }
        Ok(self.eval(z))
    }

    /// `f(z)` without argument checks; `z` must be nonzero.
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        match &self.profile {
            SphereProfile::Constant { value } => {
                if self.alpha == 0.0 {
                    *value
                } else {
                    value * euclid(z).powf(self.alpha)
                }
            }
            SphereProfile::NormPower {
                norm,
                exponent,
                scale,
            } if *exponent == self.alpha => scale * norm.eval(z).powf(self.alpha),
            p => {
                let r = euclid(z);
                let mut u = [0.0; MAX_DIM];
                for (ui, zi) in u.iter_mut().zip(z) {
                    *ui = zi / r;
                }
                r.powf(self.alpha) * p.eval(&u[..z.len()])
            }
        }
    }

    /// `f0(u)` for a unit vector `u`.
    #[inline]
    pub fn profile_at(&self, u: &[f64]) -> f64 {
        self.profile.eval(u)
    }

    /// `wt(e) = f(m_e)`.
    #[inline]
    pub fn edge_weight(&self, e: &Edge) -> f64 {
        let m = edge_midpoint(e);
        self.eval(m.coords())
    }

    /// The same weight with every value multiplied by `c`.
    pub fn scaled_by(&self, c: f64) -> Result<Self> {
        let profile = match &self.profile {
            SphereProfile::Constant { value } => SphereProfile::Constant { value: value * c },
            SphereProfile::NormPower {
                norm,
                exponent,
                scale,
            } => SphereProfile::NormPower {
                norm: norm.clone(),
                exponent: *exponent,
                scale: scale * c,
            },
            _ => {
                return Err(Error::Precondition(
                    "only constant and norm-power profiles can be rescaled".into(),
                ))
            }
        };
        AlphaWeightFunction::new(self.alpha, profile, self.dim)
    }
}

/// Free-function form of [`AlphaWeightFunction::evaluate`].
pub fn evaluate_f(f: &AlphaWeightFunction, z: &[f64]) -> Result<f64> {
    f.evaluate(z)
}

/// Free-function form of [`AlphaWeightFunction::edge_weight`].
pub fn edge_weight(f: &AlphaWeightFunction, e: &Edge) -> f64 {
    f.edge_weight(e)
}

fn check_profile_dim(p: &SphereProfile, dim: usize) -> Result<()> {
    let fixed = match p {
        SphereProfile::NormPower { norm, .. } => norm.fixed_dim(),
        SphereProfile::Tabulated(_) => Some(2),
        SphereProfile::Admissible(a) => Some(a.cylinder.dim()),
        SphereProfile::Constant { .. } => None,
    };
    match fixed {
        Some(d) if d != dim => Err(Error::Precondition(format!(
            "profile is defined in dimension {d}, weight requested in dimension {dim}"
        ))),
        _ => Ok(()),
    }
}

fn profile_range(p: &SphereProfile, dim: usize) -> (f64, f64) {
    match p {
        SphereProfile::Constant { value } => (*value, *value),
        SphereProfile::NormPower {
            norm,
            exponent,
            scale,
        } => {
            let (lo, hi) = norm.sphere_range(dim);
            let (a, b) = (scale * lo.powf(*exponent), scale * hi.powf(*exponent));
            (a.min(b), a.max(b))
        }
        // Linear interpolation attains its extremes at the nodes.
        SphereProfile::Tabulated(t) => (
            t.values.iter().cloned().fold(f64::INFINITY, f64::min),
            t.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        ),
        SphereProfile::Admissible(a) => sphere_extrema(dim, |u| a.sphere_value(u)),
    }
}

/// Number of angles used for numerical extremization on the circle.
pub const CIRCLE_GRID: usize = 4096;

/// `(min, max)` of `g` over the Euclidean unit sphere by a direction grid
/// plus local refinement around the best grid points.
pub fn sphere_extrema(dim: usize, g: impl Fn(&[f64]) -> f64 + Sync) -> (f64, f64) {
    match dim {
        1 => {
            let (a, b) = (g(&[1.0]), g(&[-1.0]));
            (a.min(b), a.max(b))
        }
        2 => {
            let n = CIRCLE_GRID;
            let step = 2.0 * PI / n as f64;
            let at = |t: f64| g(&[t.cos(), t.sin()]);
            let vals: Vec<f64> = (0..n).map(|k| at(k as f64 * step)).collect();
            let refine = |sign: f64| {
                let mut best = f64::NEG_INFINITY;
                for k in local_extrema(&vals, sign) {
                    let c = k as f64 * step;
                    let (_, v) = golden_max(|t| sign * at(t), c - step, c + step, 1e-10);
                    best = best.max(v).max(sign * vals[k]);
                }
                sign * best
            };
            (refine(-1.0), refine(1.0))
        }
        _ => {
            let dirs = numeric::sphere_directions(dim, if dim == 3 { 20_000 } else { 50_000 });
            let vals: Vec<f64> = dirs.par_iter().map(|u| g(u)).collect();
            let pick = |sign: f64| {
                let k = (0..vals.len())
                    .max_by(|&a, &b| (sign * vals[a]).total_cmp(&(sign * vals[b])))
                    .unwrap();
                sign * hill_climb(&dirs[k], |u| sign * g(u), 0.05)
            };
            (pick(-1.0), pick(1.0))
        }
    }
}

/// Indices of periodic local maxima of `sign * vals`.
fn local_extrema(vals: &[f64], sign: f64) -> Vec<usize> {
    let n = vals.len();
    let top = vals.iter().map(|v| sign * v).fold(f64::NEG_INFINITY, f64::max);
    let scale = top.abs().max(1e-300);
    (0..n)
        .filter(|&k| {
            let v = sign * vals[k];
            v >= sign * vals[(k + n - 1) % n]
                && v >= sign * vals[(k + 1) % n]
                && v >= top - 1e-3 * scale
        })
        .collect()
}

fn hill_climb(start: &[f64], g: impl Fn(&[f64]) -> f64, mut radius: f64) -> f64 {
    let dim = start.len();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut best = start.to_vec();
    let mut best_v = g(&best);
    while radius > 1e-9 {
        let mut improved = false;
        for _ in 0..20 * dim {
            let dir = numeric::random_unit(&mut rng, dim);
            let cand: Vec<f64> = best.iter().zip(&dir).map(|(b, d)| b + radius * d).collect();
            let cand = numeric::normalized(&cand);
            let v = g(&cand);
            if v > best_v {
                best_v = v;
                best = cand;
                improved = true;
            }
        }
        if !improved {
            radius *= 0.5;
        }
    }
    best_v
}

fn estimate_profile_lipschitz(p: &SphereProfile, dim: usize) -> f64 {
    match p {
        SphereProfile::Constant { .. } => 0.0,
        _ if dim == 1 => {
            let (a, b) = (p.eval(&[1.0]), p.eval(&[-1.0]));
            (a - b).abs() / 2.0
        }
        _ if dim == 2 => {
            let n = 1 << 16;
            let step = 2.0 * PI / n as f64;
            let chord = 2.0 * (step / 2.0).sin();
            let vals: Vec<f64> = (0..n)
                .map(|k| {
                    let t = k as f64 * step;
                    p.eval(&[t.cos(), t.sin()])
                })
                .collect();
            let best = (0..n)
                .map(|k| (vals[(k + 1) % n] - vals[k]).abs() / chord)
                .fold(0.0, f64::max);
            best * (1.0 + 1e-3)
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x11F5);
            let mut best: f64 = 0.0;
            for _ in 0..200_000 {
                let u = numeric::random_unit(&mut rng, dim);
                let g = numeric::random_unit(&mut rng, dim);
                let v: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + 1e-3 * b).collect();
                let v = numeric::normalized(&v);
                let d = numeric::dist(&u, &v);
                best = best.max((p.eval(&u) - p.eval(&v)).abs() / d);
            }
            best * 1.05
        }
    }
}

// ---------------------------------------------------------------------------
// Shape constants

/// Extremal ratios `|z| / mu(z)` of a norm and the directions attaining the
/// supremum.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeConstants {
    pub rho_upper: f64,
    pub rho_lower: f64,
    pub maximizer_directions: Vec<Vec<f64>>,
    pub direction_count: usize,
}

pub fn compute_shape_constants(mu: &NormSpec, dim: usize, direction_count: usize) -> Result<ShapeConstants> {
    if direction_count < 64 {
        return Err(Error::Precondition("direction_count must be at least 64".into()));
    }
    if let Some(d) = mu.fixed_dim() {
        if d != dim {
            return Err(Error::Precondition(format!("norm lives in dimension {d}, not {dim}")));
        }
    }
    let ratio = |u: &[f64]| 1.0 / mu.eval(u);
    let dirs = numeric::sphere_directions(dim, direction_count);
    let vals: Vec<f64> = dirs.iter().map(|u| ratio(u)).collect();
    let (rho_lower, rho_upper) = match (dim, mu.sphere_range_exact(dim)) {
        (_, Some((lo, hi))) => (1.0 / hi, 1.0 / lo),
        (2, None) => {
            let step = 2.0 * PI / direction_count as f64;
            let at = |t: f64| ratio(&[t.cos(), t.sin()]);
            let refine = |sign: f64| {
                let mut best = f64::NEG_INFINITY;
                for k in local_extrema(&vals, sign) {
                    let c = k as f64 * step;
                    let (_, v) = golden_max(|t| sign * at(t), c - step, c + step, 1e-8);
                    best = best.max(v).max(sign * vals[k]);
                }
                sign * best
            };
            (refine(-1.0), refine(1.0))
        }
        _ => sphere_extrema(dim, ratio),
    };
    let maximizer_directions = dirs
        .iter()
        .zip(&vals)
        .filter(|(_, &v)| v >= rho_upper * (1.0 - 1e-6))
        .map(|(u, _)| u.clone())
        .collect();
    Ok(ShapeConstants {
        rho_upper,
        rho_lower,
        maximizer_directions,
        direction_count,
    })
}

// ---------------------------------------------------------------------------
// Half D-circumference of the unit sphere

/// Result of [`compute_lambda`]: raw graph values at three resolutions and
/// their extrapolation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaEstimate {
    /// Extrapolated value.
    pub value: f64,
    pub resolutions: [usize; 3],
    pub raw: [f64; 3],
    /// `|value - raw at the finest resolution|`.
    pub error_estimate: f64,
    pub quadrature_nodes: usize,
}

/// Gauss nodes per chord in [`compute_lambda`].
pub const LAMBDA_QUAD_NODES: usize = 16;

/// D-length of the straight segment `[z, w]`: `mu(w - z) int_0^1 f(z + t(w - z))^-1 dt`.
pub fn chord_d_length(
    f: &AlphaWeightFunction,
    mu: &NormSpec,
    z: &[f64],
    w: &[f64],
    rule: &numeric::GaussLegendre,
) -> f64 {
    let d = z.len();
    let mut delta = [0.0; MAX_DIM];
    for i in 0..d {
        delta[i] = w[i] - z[i];
    }
    let len = mu.eval(&delta[..d]);
    if len == 0.0 {
        return 0.0;
    }
    let mut p = [0.0; MAX_DIM];
    len * rule.integrate(|t| {
        for i in 0..d {
            p[i] = z[i] + t * delta[i];
        }
        1.0 / f.eval(&p[..d])
    })
}

/// Half the D-circumference of the Euclidean unit sphere: the largest
/// shortest-path distance on a chord graph over the sphere, extrapolated
/// from resolutions `n/4, n/2, n` assuming second-order convergence.
pub fn compute_lambda(f: &AlphaWeightFunction, mu: &NormSpec, sphere_resolution: usize) -> Result<LambdaEstimate> {
    if f.dim != 2 && f.dim != 3 {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    if sphere_resolution < 128 {
        return Err(Error::Precondition("sphere_resolution must be at least 128".into()));
    }
    let rule = numeric::gauss(LAMBDA_QUAD_NODES);
    let resolutions = [sphere_resolution / 4, sphere_resolution / 2, sphere_resolution];
    let mut raw = [0.0; 3];
    for (slot, &n) in raw.iter_mut().zip(&resolutions) {
        *slot = lambda_at_resolution(f, mu, n, &rule);
    }
    let value = raw[2] + (raw[2] - raw[1]) / 3.0;
    Ok(LambdaEstimate {
        value,
        resolutions,
        raw,
        error_estimate: (value - raw[2]).abs(),
        quadrature_nodes: LAMBDA_QUAD_NODES,
    })
}

fn lambda_at_resolution(f: &AlphaWeightFunction, mu: &NormSpec, n: usize, rule: &numeric::GaussLegendre) -> f64 {
    let points = numeric::sphere_directions(f.dim, n);
    let adjacency = sphere_chord_graph(&points, f.dim);
    let graph: Vec<Vec<(u32, f64)>> = adjacency
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            nbrs.iter()
                .map(|&j| {
                    let (a, b) = if i < j as usize { (i, j as usize) } else { (j as usize, i) };
                    (j, chord_d_length(f, mu, &points[a], &points[b], rule))
                })
                .collect()
        })
        .collect();
    (0..points.len())
        .into_par_iter()
        .map(|s| {
            dijkstra_dense(&graph, s)
                .into_iter()
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max)
}

/// Neighbour lists of the chord graph: circle nodes joined to their two
/// neighbours; sphere nodes joined to their 24 nearest neighbours.
fn sphere_chord_graph(points: &[Vec<f64>], dim: usize) -> Vec<Vec<u32>> {
    let n = points.len();
    if dim == 2 {
        return (0..n)
            .map(|i| {
                vec![((i + 1) % n) as u32, ((i + n - 1) % n) as u32]
            })
            .collect();
    }
    let k = 24.min(n - 1);
    let mut adj: Vec<Vec<u32>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut d: Vec<(f64, u32)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (numeric::dist(&points[i], &points[j]), j as u32))
                .collect();
            d.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
            d[..k].iter().map(|&(_, j)| j).collect()
        })
        .collect();
    // Symmetrize.
    let snapshot = adj.clone();
    for (i, nbrs) in snapshot.iter().enumerate() {
        for &j in nbrs {
            if !snapshot[j as usize].contains(&(i as u32)) {
                adj[j as usize].push(i as u32);
            }
        }
    }
    adj
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem(f64, u32);
impl Eq for HeapItem {}
impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}
impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn dijkstra_dense(graph: &[Vec<(u32, f64)>], source: usize) -> Vec<f64> {
    let mut dist = vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(HeapItem(0.0, source as u32));
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > dist[u as usize] {
            continue;
        }
        for &(v, w) in &graph[u as usize] {
            let nd = d + w;
            if nd < dist[v as usize] {
                dist[v as usize] = nd;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    dist
}

// ---------------------------------------------------------------------------
// Lipschitz check

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LipschitzReport {
    /// Largest observed `|f0(u) - f0(v)| / |u - v|` over sampled sphere pairs.
    pub max_ratio: f64,
    pub declared_bound: f64,
    /// `max_ratio <= declared_bound (1 + 1e-6)`.
    pub profile_pass: bool,
    /// Constant `a = 2 L + |alpha| kappa_upper` in
    /// `|f(z) - f(w)| <= a max(|z|^(alpha-1), |w|^(alpha-1)) |z - w|`.
    pub full_space_constant: f64,
    pub full_space_samples: usize,
    pub full_space_violations: usize,
    pub sample_count: usize,
}

pub fn check_lipschitz(f: &AlphaWeightFunction, sample_count: usize, seed: u64) -> Result<LipschitzReport> {
    if sample_count < 1000 {
        return Err(Error::Precondition("sample_count must be at least 1000".into()));
    }
    let dim = f.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio: f64 = 0.0;
    for _ in 0..sample_count {
        let u = random_sphere_point(&mut rng, dim);
        let eps = 10f64.powf(rng.random_range(-4.0..0.3));
        let g = random_sphere_point(&mut rng, dim);
        let v: Vec<f64> = u.iter().zip(&g).map(|(a, b)| a + eps * b).collect();
        if euclid(&v) < 1e-9 {
            continue;
        }
        let v = numeric::normalized(&v);
        let d = numeric::dist(&u, &v);
        if d < 1e-14 {
            continue;
        }
        max_ratio = max_ratio.max((f.profile_at(&u) - f.profile_at(&v)).abs() / d);
    }
    let a = 2.0 * f.lipschitz_bound + f.alpha.abs() * f.kappa_upper;
    let mut violations = 0;
    for _ in 0..sample_count {
        let z = random_space_point(&mut rng, dim);
        let w = if rng.random_bool(0.5) {
            random_space_point(&mut rng, dim)
        } else {
            let s = 10f64.powf(rng.random_range(-3.0..-0.5)) * euclid(&z);
            let g = random_sphere_point(&mut rng, dim);
            z.iter().zip(&g).map(|(a, b)| a + s * b).collect()
        };
        if euclid(&w) < 1e-12 {
            continue;
        }
        let lhs = (f.eval(&z) - f.eval(&w)).abs();
        let m = euclid(&z).powf(f.alpha - 1.0).max(euclid(&w).powf(f.alpha - 1.0));
        let rhs = a * m * numeric::dist(&z, &w);
        if lhs > rhs * (1.0 + 1e-9) + 1e-12 * f.eval(&z).abs() {
            violations += 1;
        }
    }
    Ok(LipschitzReport {
        max_ratio,
        declared_bound: f.lipschitz_bound,
        profile_pass: max_ratio <= f.lipschitz_bound * (1.0 + 1e-6),
        full_space_constant: a,
        full_space_samples: sample_count,
        full_space_violations: violations,
        sample_count,
    })
}

fn random_sphere_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    if dim == 1 {
        return vec![if rng.random_bool(0.5) { 1.0 } else { -1.0 }];
    }
    numeric::random_unit(rng, dim)
}

fn random_space_point(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let r = 10f64.powf(rng.random_range(-1.0..1.0));
    random_sphere_point(rng, dim).into_iter().map(|x| r * x).collect()
}
