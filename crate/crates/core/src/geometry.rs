//! Cylinder norms and their flat faces, admissible weight profiles, cone
//! containment checks, and an estimator for the standard-FPP limit shape.

use std::f64::consts::PI;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_fpp, RunConfig, RunResult, StopRule};
use crate::error::{Error, Result};
use crate::lattice::{Vertex, MAX_DIM};
use crate::numeric::{self, dot, replicate_seed};
use crate::weights::{AlphaWeightFunction, NormSpec, TabulatedNorm};

// ---------------------------------------------------------------------------
// Cylinder norm

/// Gauge of the cylinder `{s z + t h a : z in Q, |t| <= 1}` where `a` is the
/// unit axis, `h` the half height and `Q` the unit ball of `cross_section`
/// restricted to the hyperplane orthogonal to `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderNorm {
    pub axis: Vec<f64>,
    pub halfheight: f64,
    pub cross_section: Box<NormSpec>,
    pub aspect: f64,
}

impl CylinderNorm {
    pub fn new(axis: Vec<f64>, halfheight: f64, cross_section: NormSpec, aspect: f64) -> Result<Self> {
        let dim = axis.len();
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::UnsupportedDimension(dim));
        }
        let n = numeric::euclid(&axis);
        if !(n > 0.0) {
            return Err(Error::Precondition("cylinder axis must be nonzero".into()));
        }
        if !(halfheight > 0.0) || !(aspect > 0.0) {
            return Err(Error::Precondition("half height and aspect must be positive".into()));
        }
        Ok(CylinderNorm {
            axis: axis.iter().map(|x| x / n).collect(),
            halfheight,
            cross_section: Box::new(cross_section),
            aspect,
        })
    }

    /// Cylinder whose cross-section is the Euclidean ball of radius
    /// `halfheight`, the smallest section containing the Euclidean ball of
    /// that radius.
    pub fn standard(axis: Vec<f64>, halfheight: f64, aspect: f64) -> Result<Self> {
        let cross = NormSpec::Scaled {
            factor: 1.0 / halfheight,
            inner: Box::new(NormSpec::Euclidean),
        };
        Self::new(axis, halfheight, cross, aspect)
    }

    pub fn dim(&self) -> usize {
        self.axis.len()
    }

    /// Axial coordinate `z . a` and the orthogonal part.
    #[inline]
    fn split(&self, z: &[f64]) -> (f64, [f64; MAX_DIM]) {
        let t = dot(z, &self.axis);
        let mut perp = [0.0; MAX_DIM];
        for i in 0..z.len() {
            perp[i] = z[i] - t * self.axis[i];
        }
        (t, perp)
    }

    /// `max(|z . a| / h, q(z_perp) / s)`.
    #[inline]
    pub fn eval(&self, z: &[f64]) -> f64 {
        let (t, perp) = self.split(z);
        let axial = t.abs() / self.halfheight;
        let lateral = self.cross_section.eval(&perp[..z.len()]) / self.aspect;
        axial.max(lateral)
    }

    /// Axial and lateral terms of the gauge separately.
    pub fn terms(&self, z: &[f64]) -> (f64, f64) {
        let (t, perp) = self.split(z);
        (
            t / self.halfheight,
            self.cross_section.eval(&perp[..z.len()]) / self.aspect,
        )
    }

    /// Largest Euclidean radius of the cross-section `Q`.
    pub fn cross_radius(&self) -> f64 {
        match self.cross_section.as_ref() {
            NormSpec::Euclidean => 1.0,
            NormSpec::Scaled { factor, inner } if **inner == NormSpec::Euclidean => 1.0 / factor,
            q => {
                let dim = self.dim();
                let dirs = numeric::sphere_directions(dim, 20_000);
                dirs.iter()
                    .filter_map(|u| {
                        let (_, p) = self.split(u);
                        let n = numeric::euclid(&p[..dim]);
                        (n > 1e-6).then(|| n / q.eval(&p[..dim]))
                    })
                    .fold(0.0, f64::max)
            }
        }
    }
}

/// Free-function form of [`CylinderNorm::eval`].
pub fn cylinder_norm_eval(cn: &CylinderNorm, z: &[f64]) -> f64 {
    cn.eval(z)
}

// ---------------------------------------------------------------------------
// Admissible profiles

/// Weight profile `f_s` on the boundary of the cylinder, equal to
/// `face_value` on both flat faces and to `lateral_value` on the lateral
/// surface below relative height `1 - transition`, linear in the axial
/// coordinate in between. The weight built on it is
/// `f(z) = nu_s(z)^alpha f_s(z / nu_s(z))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissibleProfile {
    pub cylinder: CylinderNorm,
    pub alpha: f64,
    pub face_value: f64,
    pub lateral_value: f64,
    #[serde(default = "default_transition")]
    pub transition: f64,
}

fn default_transition() -> f64 {
    0.25
}

impl AdmissibleProfile {
    pub fn new(cylinder: CylinderNorm, alpha: f64, face_value: f64, lateral_value: f64) -> Result<Self> {
        let p = AdmissibleProfile {
            cylinder,
            alpha,
            face_value,
            lateral_value,
            transition: default_transition(),
        };
        p.validate()?;
        Ok(p)
    }

    /// `f_s` constant equal to `value`.
    pub fn constant(cylinder: CylinderNorm, alpha: f64, value: f64) -> Result<Self> {
        Self::new(cylinder, alpha, value, value)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lateral_value > 0.0) || self.face_value < self.lateral_value {
            return Err(Error::Precondition(
                "admissible profile needs face_value >= lateral_value > 0".into(),
            ));
        }
        if !(self.transition > 0.0 && self.transition <= 1.0) {
            return Err(Error::Precondition("transition must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// `kappa_upper_s = sup f_s`.
    pub fn kappa_upper_s(&self) -> f64 {
        self.face_value
    }

    /// `kappa_lower_s = inf f_s`.
    pub fn kappa_lower_s(&self) -> f64 {
        self.lateral_value
    }

    /// `f_s(p)` for `p` on the boundary of the cylinder.
    pub fn boundary_value(&self, p: &[f64]) -> f64 {
        let (t, _) = self.cylinder.terms(p);
        let a = t.abs();
        let w = ((a - (1.0 - self.transition)) / self.transition).clamp(0.0, 1.0);
        self.lateral_value + (self.face_value - self.lateral_value) * w
    }

    /// `f0(u)` for a Euclidean unit vector `u`.
    pub fn sphere_value(&self, u: &[f64]) -> f64 {
        let n = self.cylinder.eval(u);
        let mut p = [0.0; MAX_DIM];
        for (pi, ui) in p.iter_mut().zip(u) {
            *pi = ui / n;
        }
        n.powf(self.alpha) * self.boundary_value(&p[..u.len()])
    }

    /// The weight function `nu_s^alpha f_s`.
    pub fn weight(&self) -> Result<AlphaWeightFunction> {
        AlphaWeightFunction::new(
            self.alpha,
            crate::weights::SphereProfile::Admissible(self.clone()),
            self.cylinder.dim(),
        )
    }
}

// ---------------------------------------------------------------------------
// Cone conditions

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeConditions {
    pub pos_prob: bool,
    pub almost_sure: bool,
    /// `2^(alpha / (alpha - 1)) - 1`.
    pub t1: f64,
    /// `1 + (kappa_upper_s / kappa_lower_s) alpha^alpha / (alpha - 1)^(alpha - 1)`.
    pub t2: f64,
}

pub fn cone_threshold_t1(alpha: f64) -> f64 {
    2f64.powf(alpha / (alpha - 1.0)) - 1.0
}

pub fn cone_threshold_t2(alpha: f64, kappa_upper_s: f64, kappa_lower_s: f64) -> f64 {
    1.0 + (kappa_upper_s / kappa_lower_s) * alpha.powf(alpha) / (alpha - 1.0).powf(alpha - 1.0)
}

pub fn check_cone_conditions(alpha: f64, s: f64, kappa_upper_s: f64, kappa_lower_s: f64) -> Result<ConeConditions> {
    if !(alpha > 1.0) {
        return Err(Error::Precondition("cone conditions need alpha > 1".into()));
    }
    if !(s > 1.0) {
        return Err(Error::Precondition("cone conditions need s > 1".into()));
    }
    if !(kappa_lower_s > 0.0 && kappa_upper_s >= kappa_lower_s) {
        return Err(Error::Precondition("need kappa_upper_s >= kappa_lower_s > 0".into()));
    }
    let t1 = cone_threshold_t1(alpha);
    let t2 = cone_threshold_t2(alpha, kappa_upper_s, kappa_lower_s);
    Ok(ConeConditions {
        pos_prob: s > t1,
        almost_sure: s > t2,
        t1,
        t2,
    })
}

/// `1 + 1 / (rho_upper kappa_upper lambda)`.
pub fn alpha_near_1_threshold(rho_upper: f64, kappa_upper: f64, lambda: f64) -> f64 {
    1.0 + 1.0 / (rho_upper * kappa_upper * lambda)
}

/// Whether `alpha < 1 + 1 / (rho_upper kappa_upper lambda)`.
pub fn check_alpha_near_1_condition(alpha: f64, rho_upper: f64, kappa_upper: f64, lambda: f64) -> bool {
    alpha < alpha_near_1_threshold(rho_upper, kappa_upper, lambda)
}

// ---------------------------------------------------------------------------
// Cones

/// The cone over the flat face at `+h a` of a cylinder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeSpec {
    pub cylinder: CylinderNorm,
}

impl ConeSpec {
    pub fn new(cylinder: CylinderNorm) -> Self {
        ConeSpec { cylinder }
    }

    pub fn apex_direction(&self) -> &[f64] {
        &self.cylinder.axis
    }

    /// `z` lies in the cone: positive axial part and the axial term of the
    /// gauge attains the maximum.
    pub fn contains(&self, z: &[f64]) -> bool {
        let (t, lateral) = self.cylinder.terms(z);
        t > 0.0 && t >= lateral
    }

    /// `z` lies in the opposite cone.
    pub fn contains_negative(&self, z: &[f64]) -> bool {
        let neg: Vec<f64> = z.iter().map(|x| -x).collect();
        self.contains(&neg)
    }

    /// Full Euclidean opening angle `2 atan(s r / h)` with `r` the largest
    /// radius of the cross-section.
    pub fn euclidean_opening_angle(&self) -> f64 {
        let c = &self.cylinder;
        2.0 * (c.aspect * c.cross_radius() / c.halfheight).atan()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConeStats {
    pub in_k: f64,
    pub in_neg_k: f64,
    pub outside_both: usize,
    pub total: usize,
}

/// Classify the last `tail_fraction` of absorbed vertices, by absorption
/// order, into the cone, its negative, or neither.
pub fn cone_membership_stats(result: &RunResult, cone: &ConeSpec, tail_fraction: f64) -> Result<ConeStats> {
    classify_vertices(&result.final_state.vertex_log, cone, tail_fraction)
}

pub fn classify_vertices(log: &[(Vertex, f64)], cone: &ConeSpec, tail_fraction: f64) -> Result<ConeStats> {
    if !(tail_fraction > 0.0 && tail_fraction <= 1.0) {
        return Err(Error::Precondition("tail_fraction must lie in (0, 1]".into()));
    }
    let n = log.len();
    let k = ((n as f64 * tail_fraction).ceil() as usize).clamp(1, n);
    let (mut pos, mut neg, mut neither) = (0usize, 0usize, 0usize);
    for (v, _) in &log[n - k..] {
        let p = v.to_real();
        let z = &p[..v.dim()];
        if cone.contains(z) {
            pos += 1;
        } else if cone.contains_negative(z) {
            neg += 1;
        } else {
            neither += 1;
        }
    }
    Ok(ConeStats {
        in_k: pos as f64 / k as f64,
        in_neg_k: neg as f64 / k as f64,
        outside_both: neither,
        total: k,
    })
}

// ---------------------------------------------------------------------------
// Empirical limit shape

/// A planar norm estimated from standard-FPP clusters: boundary radii of the
/// time-rescaled, symmetrized and convexified cluster at the centres of
/// equal angular bins.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalNorm {
    pub angles: Vec<f64>,
    pub radii: Vec<f64>,
    pub time: f64,
    pub replicates: usize,
    pub seeds: Vec<u64>,
    /// Replicate-averaged radii before symmetrization and hulling.
    pub raw_radii: Vec<f64>,
}

impl EmpiricalNorm {
    pub fn norm(&self) -> Result<NormSpec> {
        Ok(NormSpec::Tabulated(TabulatedNorm::new(
            self.angles.clone(),
            self.radii.clone(),
        )?))
    }

    /// Boundary radii in `angle,value` form, as loaded by the weights module.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        crate::weights::write_angle_table(path, &self.angles, &self.radii)
    }

    pub fn load_table(path: &Path) -> Result<TabulatedNorm> {
        TabulatedNorm::load_csv(path)
    }

    /// Convexity of the boundary polygon, via the sign of consecutive turns.
    pub fn is_convex(&self, tol: f64) -> bool {
        polygon_is_convex(&self.angles, &self.radii, tol)
    }
}

pub fn polygon_is_convex(angles: &[f64], radii: &[f64], tol: f64) -> bool {
    let n = angles.len();
    let pts: Vec<(f64, f64)> = angles
        .iter()
        .zip(radii)
        .map(|(a, r)| (r * a.cos(), r * a.sin()))
        .collect();
    (0..n).all(|i| {
        let (a, b, c) = (pts[i], pts[(i + 1) % n], pts[(i + 2) % n]);
        let cross = (b.0 - a.0) * (c.1 - b.1) - (b.1 - a.1) * (c.0 - b.0);
        cross >= -tol
    })
}

/// Outer boundary radius along `u` of the union of unit squares centred at
/// the vertices in `occupied`, probed in steps of `1/16`.
fn fattened_radius(occupied: &rustc_hash::FxHashSet<(i32, i32)>, u: (f64, f64), max_r: f64) -> f64 {
    let step = 1.0 / 16.0;
    let mut best = 0.0;
    let mut r = 0.0;
    while r <= max_r {
        let key = ((r * u.0).round() as i32, (r * u.1).round() as i32);
        if occupied.contains(&key) {
            best = r;
        }
        r += step;
    }
    best
}

/// Orbit of an angular bin under the symmetries of the square lattice, for
/// `n` bins centred at `(k + 1/2) 2 pi / n` with `n` divisible by 8.
fn square_orbit(k: usize, n: usize) -> [usize; 8] {
    let q = n / 4;
    let refl = |j: usize| n - 1 - j;
    let rot = |j: usize, m: usize| (j + m * q) % n;
    [
        k,
        rot(k, 1),
        rot(k, 2),
        rot(k, 3),
        refl(k),
        rot(refl(k), 1),
        rot(refl(k), 2),
        rot(refl(k), 3),
    ]
}

/// Replace each value by the mean over its lattice-symmetry orbit, assigning
/// one computed value to every orbit member.
pub fn symmetrize_square(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut out = vec![f64::NAN; n];
    for k in 0..n {
        if !out[k].is_nan() {
            continue;
        }
        let mut orbit = square_orbit(k, n).to_vec();
        orbit.sort_unstable();
        orbit.dedup();
        let mean = orbit.iter().map(|&j| values[j]).sum::<f64>() / orbit.len() as f64;
        for j in orbit {
            out[j] = mean;
        }
    }
    out
}

/// Convex hull of planar points (monotone chain), counter-clockwise.
pub fn convex_hull(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut hull: Vec<(f64, f64)> = Vec::with_capacity(2 * p.len());
    for &pt in &p {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(pt);
    }
    let lower = hull.len() + 1;
    for &pt in p.iter().rev().skip(1) {
        while hull.len() >= lower && cross(hull[hull.len() - 2], hull[hull.len() - 1], pt) <= 0.0 {
            hull.pop();
        }
        hull.push(pt);
    }
    hull.pop();
    hull
}

/// Distance from the origin to the boundary of a convex polygon containing
/// it, along the unit direction `u`.
pub fn polygon_ray_radius(poly: &[(f64, f64)], u: (f64, f64)) -> f64 {
    let n = poly.len();
    let mut best: f64 = 0.0;
    for i in 0..n {
        let (p, q) = (poly[i], poly[(i + 1) % n]);
        let e = (q.0 - p.0, q.1 - p.1);
        // Solve p + s e = r u.
        let det = e.0 * (-u.1) - e.1 * (-u.0);
        if det.abs() < 1e-300 {
            continue;
        }
        let s = ((-p.0) * (-u.1) - (-p.1) * (-u.0)) / det;
        let r = (e.0 * (-p.1) - e.1 * (-p.0)) / det;
        if (-1e-12..=1.0 + 1e-12).contains(&s) && r > 0.0 {
            best = best.max(r);
        }
    }
    best
}

/// Bin-centre angles `(k + 1/2) 2 pi / n`.
pub fn bin_angles(n: usize) -> Vec<f64> {
    (0..n).map(|k| (k as f64 + 0.5) * 2.0 * PI / n as f64).collect()
}

/// Estimate the limit-shape norm of standard FPP with `Exp(1)` passage times
/// in the plane from `replicates` clusters at time `t`.
pub fn estimate_mu(replicates: usize, t: f64, seed: u64, direction_bins: usize) -> Result<EmpiricalNorm> {
    if replicates == 0 {
        return Err(Error::InsufficientSample("at least one replicate is needed".into()));
    }
    if t < 50.0 {
        return Err(Error::Precondition("estimate_mu needs t >= 50".into()));
    }
    if direction_bins < 8 || direction_bins % 8 != 0 {
        return Err(Error::Precondition(
            "direction_bins must be a positive multiple of 8".into(),
        ));
    }
    let weight = AlphaWeightFunction::constant(0.0, 1.0, 2)?;
    let seeds: Vec<u64> = (0..replicates as u64).map(|i| replicate_seed(seed, i)).collect();
    let angles = bin_angles(direction_bins);
    let per_rep: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| -> Result<Vec<f64>> {
            let run = run_fpp(&RunConfig::new(weight.clone(), s, StopRule::Time { t }))?;
            Ok(cluster_radii(&run.final_state.vertex_log, &angles, t))
        })
        .collect::<Result<_>>()?;
    let mut raw = vec![0.0; direction_bins];
    for r in &per_rep {
        for (acc, x) in raw.iter_mut().zip(r) {
            *acc += x / replicates as f64;
        }
    }
    if raw.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InsufficientSample("a direction bin has no boundary point".into()));
    }
    let radii = convexify_symmetric(&angles, &raw);
    Ok(EmpiricalNorm {
        angles,
        radii,
        time: t,
        replicates,
        seeds,
        raw_radii: raw,
    })
}

/// Fattened-cluster boundary radius along each angle, divided by `scale`.
pub fn cluster_radii(log: &[(Vertex, f64)], angles: &[f64], scale: f64) -> Vec<f64> {
    let occupied: rustc_hash::FxHashSet<(i32, i32)> =
        log.iter().map(|(v, _)| (v.coord(0), v.coord(1))).collect();
    let max_r = log.iter().map(|(v, _)| v.euclidean_norm()).fold(0.0, f64::max) + 2.0;
    angles
        .iter()
        .map(|a| fattened_radius(&occupied, (a.cos(), a.sin()), max_r) / scale)
        .collect()
}

/// Symmetrize, take the convex hull of the boundary points and resample it at
/// the same angles, then symmetrize again so that orbit members agree
/// exactly.
pub fn convexify_symmetric(angles: &[f64], radii: &[f64]) -> Vec<f64> {
    let sym = symmetrize_square(radii);
    let pts: Vec<(f64, f64)> = angles
        .iter()
        .zip(&sym)
        .map(|(a, r)| (r * a.cos(), r * a.sin()))
        .collect();
    let hull = convex_hull(&pts);
    let resampled: Vec<f64> = angles
        .iter()
        .map(|a| polygon_ray_radius(&hull, (a.cos(), a.sin())))
        .collect();
    symmetrize_square(&resampled)
}
