//! The weighted metric `D`: path length `int f^-1 d(mu-length)`.
//!
//! Distances are approximated by shortest paths on a box grid with a
//! 16-neighbour stencil in the plane and 26 neighbours in space. Every grid
//! edge is a straight segment whose cost is its D-length, so grid distances
//! are lengths of actual piecewise linear paths and over-estimate `D` by at
//! most the stencil anisotropy factor plus the endpoint snapping error.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{polygon_is_convex, CylinderNorm};
use crate::lattice::MAX_DIM;
use crate::numeric::{self, euclid, gauss32, gauss8, GaussLegendre};
use crate::weights::{compute_shape_constants, AlphaWeightFunction, NormSpec};

/// Gauss nodes per grid edge.
pub const EDGE_QUAD_NODES: usize = 8;
/// Gauss nodes per endpoint snap segment.
pub const SNAP_QUAD_NODES: usize = 32;
/// Relative tolerance of adaptive path quadrature.
pub const PATH_QUAD_TOL: f64 = 1e-12;
/// Relative quadrature tolerance charged to every grid distance.
pub const GRID_QUAD_TOL: f64 = 1e-6;

/// Absolute radius tolerance of the D-ball bisection.
pub const BALL_BISECTION_TOL: f64 = 1e-4;
pub const BALL_BISECTION_MAX_ITER: usize = 60;

// ---------------------------------------------------------------------------
// Piecewise linear paths

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PLPath {
    pub vertices: Vec<Vec<f64>>,
}

impl PLPath {
    pub fn new(vertices: Vec<Vec<f64>>) -> Result<Self> {
        if vertices.len() < 2 {
            return Err(Error::Precondition("a path needs at least two vertices".into()));
        }
        let d = vertices[0].len();
        if d == 0 || d > MAX_DIM || vertices.iter().any(|v| v.len() != d) {
            return Err(Error::Precondition("path vertices must share one dimension".into()));
        }
        if vertices.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Precondition("consecutive path vertices must differ".into()));
        }
        Ok(PLPath { vertices })
    }

    pub fn segment(a: &[f64], b: &[f64]) -> Result<Self> {
        PLPath::new(vec![a.to_vec(), b.to_vec()])
    }

    pub fn dim(&self) -> usize {
        self.vertices[0].len()
    }

    /// Sum of the mu-lengths of the segments.
    pub fn mu_length(&self, mu: &NormSpec) -> f64 {
        self.vertices
            .windows(2)
            .map(|w| {
                let d: Vec<f64> = w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect();
                mu.eval(&d)
            })
            .sum()
    }
}

/// D-length of the radial segment `[0, p]`, exact for `alpha < 1`.
pub fn ray_d_length(f: &AlphaWeightFunction, mu: &NormSpec, p: &[f64]) -> f64 {
    if p.iter().all(|&x| x == 0.0) {
        return 0.0;
    }
    mu.eval(p) / (f.eval(p) * (1.0 - f.alpha))
}

/// D-length of `[a, b]` with a fixed Gauss rule; the segment must avoid 0.
#[inline]
pub fn segment_d_length_fixed(f: &AlphaWeightFunction, mu: &NormSpec, a: &[f64], b: &[f64], rule: &GaussLegendre) -> f64 {
    crate::weights::chord_d_length(f, mu, a, b, rule)
}

fn segment_integral_adaptive(f: &AlphaWeightFunction, a: &[f64], b: &[f64], rule: &GaussLegendre, lo: f64, hi: f64, whole: f64, depth: usize) -> f64 {
    let mid = 0.5 * (lo + hi);
    let left = panel(f, a, b, rule, lo, mid);
    let right = panel(f, a, b, rule, mid, hi);
    let both = left + right;
    if depth == 0 || (both - whole).abs() <= PATH_QUAD_TOL * both.abs() {
        return both;
    }
    segment_integral_adaptive(f, a, b, rule, lo, mid, left, depth - 1)
        + segment_integral_adaptive(f, a, b, rule, mid, hi, right, depth - 1)
}

/// `int_lo^hi f(a + t (b - a))^-1 dt`.
fn panel(f: &AlphaWeightFunction, a: &[f64], b: &[f64], rule: &GaussLegendre, lo: f64, hi: f64) -> f64 {
    let d = a.len();
    let mut p = [0.0; MAX_DIM];
    (hi - lo)
        * rule.integrate(|s| {
            let t = lo + s * (hi - lo);
            for i in 0..d {
                p[i] = a[i] + t * (b[i] - a[i]);
            }
            1.0 / f.eval(&p[..d])
        })
}

/// Parameter `t` in `[0, 1]` at which `[a, b]` passes through the origin.
fn origin_crossing(a: &[f64], b: &[f64]) -> Option<f64> {
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let dd = numeric::dot(&d, &d);
    let t = -numeric::dot(a, &d) / dd;
    if !(-1e-15..=1.0 + 1e-15).contains(&t) {
        return None;
    }
    let closest: f64 = a.iter().zip(&d).map(|(x, y)| (x + t * y).powi(2)).sum::<f64>().sqrt();
    let scale = euclid(a).max(euclid(b));
    (closest <= 1e-14 * scale).then_some(t.clamp(0.0, 1.0))
}

/// D-length of one segment by adaptive Gauss quadrature. Segments through
/// the origin are split there and the radial pieces integrated exactly.
pub fn segment_d_length(f: &AlphaWeightFunction, mu: &NormSpec, a: &[f64], b: &[f64], rule: &GaussLegendre) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    if let Some(t) = origin_crossing(a, b) {
        if f.alpha >= 1.0 {
            return Err(Error::Singularity(
                "segment passes through the origin and 1/f is not integrable there".into(),
            ));
        }
        let _ = t;
        return Ok(ray_d_length(f, mu, a) + ray_d_length(f, mu, b));
    }
    let delta: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let len = mu.eval(&delta);
    let whole = panel(f, a, b, rule, 0.0, 1.0);
    Ok(len * segment_integral_adaptive(f, a, b, rule, 0.0, 1.0, whole, 40))
}

/// D-length of a piecewise linear path.
pub fn d_length(path: &PLPath, f: &AlphaWeightFunction, mu: &NormSpec, quad_nodes: usize) -> Result<f64> {
    if quad_nodes < 8 {
        return Err(Error::Precondition("at least 8 quadrature nodes are required".into()));
    }
    if path.dim() != f.dim {
        return Err(Error::Precondition("path and weight dimensions differ".into()));
    }
    let rule = numeric::gauss(quad_nodes);
    path.vertices
        .windows(2)
        .map(|w| segment_d_length(f, mu, &w[0], &w[1], &rule))
        .sum()
}

// ---------------------------------------------------------------------------
// Regions

/// Closed subsets of `R^d` that restrict grid paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Region {
    Everywhere,
    /// `norm(z) <= radius`.
    NormBall { norm: NormSpec, radius: f64 },
    /// `norm(z) >= radius`.
    NormExterior { norm: NormSpec, radius: f64 },
    /// `inner <= norm(z) <= outer`.
    Annulus { norm: NormSpec, inner: f64, outer: f64 },
    Intersection { parts: Vec<Region> },
}

const REGION_SLACK: f64 = 1e-12;

impl Region {
    pub fn contains(&self, z: &[f64]) -> bool {
        match self {
            Region::Everywhere => true,
            Region::NormBall { norm, radius } => norm.eval(z) <= radius * (1.0 + REGION_SLACK),
            Region::NormExterior { norm, radius } => norm.eval(z) >= radius * (1.0 - REGION_SLACK),
            Region::Annulus { norm, inner, outer } => {
                let n = norm.eval(z);
                n >= inner * (1.0 - REGION_SLACK) && n <= outer * (1.0 + REGION_SLACK)
            }
            Region::Intersection { parts } => parts.iter().all(|r| r.contains(z)),
        }
    }

    fn is_everywhere(&self) -> bool {
        matches!(self, Region::Everywhere)
    }
}

// ---------------------------------------------------------------------------
// Grid

/// Worst-case ratio of stencil path length to Euclidean length.
pub fn stencil_factor(dim: usize) -> f64 {
    match dim {
        2 => 1.0 / (0.5f64.atan() / 2.0).cos(),
        3 => {
            static F: OnceLock<f64> = OnceLock::new();
            *F.get_or_init(|| {
                let offs = stencil_offsets(3);
                let vecs: Vec<[f64; 3]> = offs
                    .iter()
                    .map(|o| [o[0] as f64, o[1] as f64, o[2] as f64])
                    .collect();
                // The stencil metric's unit ball is the hull of the normalized
                // offsets; its gauge is largest at the nearest facet.
                let unit: Vec<[f64; 3]> = vecs
                    .iter()
                    .map(|v| {
                        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        [v[0] / n, v[1] / n, v[2] / n]
                    })
                    .collect();
                let mut nearest = f64::INFINITY;
                let m = unit.len();
                for i in 0..m {
                    for j in i + 1..m {
                        for k in j + 1..m {
                            let (a, b, c) = (unit[i], unit[j], unit[k]);
                            let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                            let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                            let n = [
                                u[1] * v[2] - u[2] * v[1],
                                u[2] * v[0] - u[0] * v[2],
                                u[0] * v[1] - u[1] * v[0],
                            ];
                            let nn = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                            if nn < 1e-9 {
                                continue;
                            }
                            let n = [n[0] / nn, n[1] / nn, n[2] / nn];
                            let off = n[0] * a[0] + n[1] * a[1] + n[2] * a[2];
                            let (n, off) = if off < 0.0 { ([-n[0], -n[1], -n[2]], -off) } else { (n, off) };
                            // A supporting plane: all points on one side.
                            if unit
                                .iter()
                                .all(|p| n[0] * p[0] + n[1] * p[1] + n[2] * p[2] <= off + 1e-12)
                            {
                                nearest = nearest.min(off);
                            }
                        }
                    }
                }
                1.0 / nearest
            })
        }
        _ => 1.0,
    }
}

/// Neighbour offsets: axis, diagonal and knight moves in the plane; the 26
/// cube neighbours in space.
pub fn stencil_offsets(dim: usize) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    match dim {
        2 => {
            for dx in -2i64..=2 {
                for dy in -2i64..=2 {
                    let (a, b) = (dx.abs(), dy.abs());
                    let keep = (a + b == 1) || (a == 1 && b == 1) || (a == 1 && b == 2) || (a == 2 && b == 1);
                    if keep {
                        out.push([dx, dy, 0]);
                    }
                }
            }
        }
        3 => {
            for dx in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dz in -1i64..=1 {
                        if (dx, dy, dz) != (0, 0, 0) {
                            out.push([dx, dy, dz]);
                        }
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// A box of grid nodes `h * i` for integer `i` between `lo` and `hi`, with
/// nodes outside `region` or within `h/2` of the origin removed.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GeodesicGrid {
    pub dim: usize,
    pub step: f64,
    /// Integer index of the first node along each axis.
    pub lo_index: [i64; 3],
    pub shape: [usize; 3],
    pub region: Region,
}

/// Grid shortest-path distances from a set of sources.
#[derive(Clone, Debug)]
pub struct GridSolution {
    pub dist: Vec<f64>,
}

#[derive(Copy, Clone, PartialEq)]
struct Item(f64, usize);
impl Eq for Item {}
impl Ord for Item {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}
impl PartialOrd for Item {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl GeodesicGrid {
    pub fn new(lo: &[f64], hi: &[f64], step: f64, region: Region) -> Result<Self> {
        let dim = lo.len();
        if !(2..=3).contains(&dim) || hi.len() != dim {
            return Err(Error::UnsupportedDimension(dim));
        }
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Precondition("grid step must be positive".into()));
        }
        let mut lo_index = [0i64; 3];
        let mut shape = [1usize; 3];
        for k in 0..dim {
            if !(hi[k] > lo[k]) {
                return Err(Error::Precondition("grid box must have positive extent".into()));
            }
            let a = (lo[k] / step - 1e-9).floor() as i64;
            let b = (hi[k] / step + 1e-9).ceil() as i64;
            lo_index[k] = a;
            shape[k] = (b - a + 1) as usize;
        }
        let total: usize = shape[..dim].iter().product();
        if total > 60_000_000 {
            return Err(Error::Precondition(format!("grid of {total} nodes is too large")));
        }
        Ok(GeodesicGrid {
            dim,
            step,
            lo_index,
            shape,
            region,
        })
    }

    /// Box `[-1.6 R, 1.6 R]^d` with `R` the largest Euclidean norm among the
    /// points.
    pub fn around(points: &[&[f64]], step: f64, region: Region) -> Result<Self> {
        let dim = points[0].len();
        let r = points.iter().map(|p| euclid(p)).fold(0.0, f64::max).max(step);
        let b = 1.6 * r + 2.0 * step;
        GeodesicGrid::new(&vec![-b; dim], &vec![b; dim], step, region)
    }

    pub fn node_count(&self) -> usize {
        self.shape[..self.dim].iter().product()
    }

    #[inline]
    fn multi(&self, node: usize) -> [i64; 3] {
        let mut m = [0i64; 3];
        let mut rest = node;
        for k in (0..self.dim).rev() {
            m[k] = (rest % self.shape[k]) as i64;
            rest /= self.shape[k];
        }
        m
    }

    #[inline]
    fn index(&self, m: &[i64; 3]) -> Option<usize> {
        let mut idx = 0usize;
        for k in 0..self.dim {
            if m[k] < 0 || m[k] >= self.shape[k] as i64 {
                return None;
            }
            idx = idx * self.shape[k] + m[k] as usize;
        }
        Some(idx)
    }

    /// Coordinates of a node.
    #[inline]
    pub fn point(&self, node: usize) -> [f64; MAX_DIM] {
        let m = self.multi(node);
        let mut p = [0.0; MAX_DIM];
        for k in 0..self.dim {
            p[k] = (m[k] + self.lo_index[k]) as f64 * self.step;
        }
        p
    }

    fn raw_in_domain(&self, p: &[f64]) -> bool {
        euclid(p) >= 0.5 * self.step && self.region.contains(p)
    }

    /// Whether `p` lies inside the box.
    pub fn in_box(&self, p: &[f64]) -> bool {
        (0..self.dim).all(|k| {
            let x = p[k] / self.step - self.lo_index[k] as f64;
            x >= -1e-9 && x <= (self.shape[k] - 1) as f64 + 1e-9
        })
    }

    /// Nodes of the grid cell containing `p` that belong to the domain; a
    /// single node if `p` sits on one.
    pub fn cell_nodes(&self, p: &[f64]) -> Vec<usize> {
        let mut base = [0i64; 3];
        let mut exact = true;
        let mut frac = [0.0; 3];
        for k in 0..self.dim {
            let x = p[k] / self.step - self.lo_index[k] as f64;
            let r = x.round();
            if (x - r).abs() < 1e-9 {
                base[k] = r as i64;
            } else {
                exact = false;
                base[k] = x.floor() as i64;
                frac[k] = x - x.floor();
            }
        }
        let corners = if exact { 1 } else { 1 << self.dim };
        let mut out = Vec::new();
        for c in 0..corners {
            let mut m = base;
            for k in 0..self.dim {
                if !exact && frac[k] > 0.0 && (c >> k) & 1 == 1 {
                    m[k] += 1;
                }
            }
            if let Some(i) = self.index(&m) {
                let q = self.point(i);
                if self.raw_in_domain(&q[..self.dim]) && !out.contains(&i) {
                    out.push(i);
                }
            }
        }
        out
    }

    /// Whether the straight grid edge `[p, q]` stays in the region.
    fn edge_allowed(&self, p: &[f64], q: &[f64]) -> bool {
        if self.region.is_everywhere() {
            return true;
        }
        let d = self.dim;
        let mut m = [0.0; MAX_DIM];
        [0.25, 0.5, 0.75].iter().all(|&t| {
            for i in 0..d {
                m[i] = p[i] + t * (q[i] - p[i]);
            }
            self.region.contains(&m[..d])
        })
    }

    /// Multi-source Dijkstra. Stops early once every target is settled, or
    /// once the first target is settled if `first_target_only`.
    pub fn solve(
        &self,
        f: &AlphaWeightFunction,
        mu: &NormSpec,
        sources: &[(usize, f64)],
        targets: &[usize],
        first_target_only: bool,
    ) -> Result<(GridSolution, Option<usize>)> {
        if f.dim != self.dim {
            return Err(Error::Precondition("grid and weight dimensions differ".into()));
        }
        let n = self.node_count();
        let dim = self.dim;
        let rule = gauss8();
        let offsets = stencil_offsets(dim);
        let mut dist = vec![f64::INFINITY; n];
        let mut settled = vec![false; n];
        // 0 unknown, 1 inside, 2 outside.
        let mut status = vec![0u8; n];
        let mut is_target = vec![false; if targets.is_empty() { 0 } else { n }];
        for &t in targets {
            is_target[t] = true;
        }
        let mut remaining = targets.len();
        let mut heap = BinaryHeap::with_capacity(sources.len().max(1024));
        for &(s, v) in sources {
            if v < dist[s] {
                dist[s] = v;
                heap.push(Item(v, s));
            }
        }
        let mut first_hit = None;
        while let Some(Item(d, u)) = heap.pop() {
            if settled[u] || d > dist[u] {
                continue;
            }
            settled[u] = true;
            if !is_target.is_empty() && is_target[u] {
                if first_target_only {
                    first_hit = Some(u);
                    break;
                }
                remaining -= 1;
                if remaining == 0 {
                    break;
                }
            }
            let mu_ = self.multi(u);
            let pu = self.point(u);
            for o in &offsets {
                let m = [mu_[0] + o[0], mu_[1] + o[1], mu_[2] + o[2]];
                let Some(v) = self.index(&m) else { continue };
                if settled[v] {
                    continue;
                }
                let pv = self.point(v);
                if status[v] == 0 {
                    status[v] = if self.raw_in_domain(&pv[..dim]) { 1 } else { 2 };
                }
                if status[v] == 2 || !self.edge_allowed(&pu[..dim], &pv[..dim]) {
                    continue;
                }
                // Canonical orientation keeps the cost exactly symmetric.
                let c = if u < v {
                    segment_d_length_fixed(f, mu, &pu[..dim], &pv[..dim], rule)
                } else {
                    segment_d_length_fixed(f, mu, &pv[..dim], &pu[..dim], rule)
                };
                let nd = d + c;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Item(nd, v));
                }
            }
        }
        Ok((GridSolution { dist }, first_hit))
    }

    /// Domain nodes satisfying a predicate on their coordinates.
    pub fn nodes_where(&self, pred: impl Fn(&[f64]) -> bool) -> Vec<usize> {
        (0..self.node_count())
            .filter(|&i| {
                let p = self.point(i);
                let p = &p[..self.dim];
                self.raw_in_domain(p) && pred(p)
            })
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Distances

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DistanceReport {
    pub value: f64,
    /// D-length of the snap segment at each end.
    pub snap_z: f64,
    pub snap_w: f64,
    pub step: f64,
    pub stencil_factor: f64,
    pub edge_quad_nodes: usize,
    pub snap_quad_nodes: usize,
    /// `(factor - 1) value + 2 (snap_z + snap_w) + quadrature tolerance`.
    pub error_budget: f64,
}

fn snap_segment(f: &AlphaWeightFunction, mu: &NormSpec, a: &[f64], b: &[f64]) -> f64 {
    if a == b {
        return 0.0;
    }
    match origin_crossing(a, b) {
        Some(_) if f.alpha < 1.0 => ray_d_length(f, mu, a) + ray_d_length(f, mu, b),
        Some(_) => f64::INFINITY,
        None => segment_d_length_fixed(f, mu, a, b, gauss32()),
    }
}

/// Grid approximation of `D(z, w)`: the cell corners around `z` are seeded
/// with their snap-segment lengths, and the answer is the best corner around
/// `w` plus its snap segment.
pub fn d_distance_report(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec, grid: &GeodesicGrid) -> Result<DistanceReport> {
    let factor = stencil_factor(grid.dim);
    let report = |value: f64, sz: f64, sw: f64| DistanceReport {
        value,
        snap_z: sz,
        snap_w: sw,
        step: grid.step,
        stencil_factor: factor,
        edge_quad_nodes: EDGE_QUAD_NODES,
        snap_quad_nodes: SNAP_QUAD_NODES,
        error_budget: (factor - 1.0) * value + 2.0 * (sz + sw) + GRID_QUAD_TOL * value,
    };
    if z.len() != grid.dim || w.len() != grid.dim {
        return Err(Error::Domain("point dimension differs from the grid".into()));
    }
    if z == w {
        return Ok(report(0.0, 0.0, 0.0));
    }
    for p in [z, w] {
        if !grid.in_box(p) || !grid.region.contains(p) {
            return Err(Error::OutsideGrid(p.to_vec()));
        }
    }
    let zc = grid.cell_nodes(z);
    let wc = grid.cell_nodes(w);
    if zc.is_empty() || wc.is_empty() {
        return Err(Error::OutsideGrid(if zc.is_empty() { z.to_vec() } else { w.to_vec() }));
    }
    let d = grid.dim;
    let sources: Vec<(usize, f64)> = zc
        .iter()
        .map(|&c| (c, snap_segment(f, mu, z, &grid.point(c)[..d])))
        .filter(|s| s.1.is_finite())
        .collect();
    let (sol, _) = grid.solve(f, mu, &sources, &wc, false)?;
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for &c in &wc {
        let sw = snap_segment(f, mu, &grid.point(c)[..d], w);
        let v = sol.dist[c] + sw;
        if v < best.0 {
            let sz = sources.iter().map(|s| s.1).fold(0.0, f64::max);
            best = (v, sz, sw);
        }
    }
    if !best.0.is_finite() {
        return Err(Error::DisconnectedDomain);
    }
    Ok(report(best.0, best.1, best.2))
}

pub fn d_distance(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec, grid: &GeodesicGrid) -> Result<f64> {
    if f.dim == 1 {
        return one_dim_distance(z, w, f, mu);
    }
    Ok(d_distance_report(z, w, f, mu, grid)?.value)
}

/// In one dimension the only path from `z` to `w` is the segment.
fn one_dim_distance(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec) -> Result<f64> {
    segment_d_length(f, mu, z, w, numeric::gauss32())
}

/// `D` restricted to paths in `region`, on a grid of the given step over the
/// default box around the points.
pub fn d_distance_restricted(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec, region: Region, step: f64) -> Result<DistanceReport> {
    let grid = GeodesicGrid::around(&[z, w], step, region)?;
    d_distance_report(z, w, f, mu, &grid)
}

/// `D(z, w)` on the default box around the points.
pub fn d_distance_auto(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec, step: f64) -> Result<DistanceReport> {
    d_distance_restricted(z, w, f, mu, Region::Everywhere, step)
}

/// Grid distance from the nodes satisfying `source` to the nearest node
/// satisfying `target`.
pub fn d_set_distance(
    f: &AlphaWeightFunction,
    mu: &NormSpec,
    grid: &GeodesicGrid,
    source: impl Fn(&[f64]) -> bool,
    target: impl Fn(&[f64]) -> bool,
) -> Result<f64> {
    let src: Vec<(usize, f64)> = grid.nodes_where(&source).into_iter().map(|i| (i, 0.0)).collect();
    let tgt = grid.nodes_where(&target);
    if src.is_empty() || tgt.is_empty() {
        return Err(Error::Precondition("source or target set has no grid nodes".into()));
    }
    let (sol, hit) = grid.solve(f, mu, &src, &tgt, true)?;
    match hit {
        Some(t) => Ok(sol.dist[t]),
        None => Err(Error::DisconnectedDomain),
    }
}

// ---------------------------------------------------------------------------
// Checks

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub r: f64,
    pub base: f64,
    pub scaled: f64,
    /// `r^(1 - alpha) base`.
    pub expected: f64,
    pub discrepancy: f64,
    pub base_step: f64,
    pub scaled_step: f64,
}

/// Compare `D(rz, rw)` with `r^(1-alpha) D(z, w)`. With `proportional` the
/// scaled grid uses step `r h`, otherwise both use `h`.
pub fn scaling_check(
    f: &AlphaWeightFunction,
    mu: &NormSpec,
    z: &[f64],
    w: &[f64],
    r: f64,
    step: f64,
    proportional: bool,
) -> Result<ScalingReport> {
    if !(r > 0.0) {
        return Err(Error::Precondition("scale factor must be positive".into()));
    }
    let base = distance_any_dim(z, w, f, mu, step)?;
    let rz: Vec<f64> = z.iter().map(|x| r * x).collect();
    let rw: Vec<f64> = w.iter().map(|x| r * x).collect();
    let scaled_step = if proportional { r * step } else { step };
    let scaled = if r == 1.0 { base } else { distance_any_dim(&rz, &rw, f, mu, scaled_step)? };
    let expected = r.powf(1.0 - f.alpha) * base;
    Ok(ScalingReport {
        r,
        base,
        scaled,
        expected,
        discrepancy: if expected > 0.0 { (scaled - expected).abs() / expected } else { 0.0 },
        base_step: step,
        scaled_step,
    })
}

fn distance_any_dim(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec, step: f64) -> Result<f64> {
    if f.dim == 1 {
        return one_dim_distance(z, w, f, mu);
    }
    Ok(d_distance_auto(z, w, f, mu, step)?.value)
}

/// The lower bound `phi(z, w)` with `rho_upper = sup |x| / mu(x)` and
/// `kappa_upper = sup f0`.
///
/// For `alpha < 0` the bound integrates `(|z| - rho t)^(-alpha)`, whose
/// antiderivative carries the factor `1 / (1 - alpha)`; the radius is
/// clamped at 0 once the Euclidean ball around `z` reaches the origin.
pub fn phi_lower_bound(z: &[f64], w: &[f64], alpha: f64, rho_upper: f64, kappa_upper: f64, mu: &NormSpec) -> f64 {
    let d: Vec<f64> = w.iter().zip(z).map(|(a, b)| a - b).collect();
    let m = mu.eval(&d);
    let r = euclid(z);
    let (rho, k) = (rho_upper, kappa_upper);
    if alpha == 1.0 {
        ((r + rho * m) / r).ln() / (rho * k)
    } else if alpha >= 0.0 {
        (r.powf(1.0 - alpha) - (r + rho * m).powf(1.0 - alpha)) / (rho * k * (alpha - 1.0))
    } else {
        let inner = (r - rho * m).max(0.0);
        (r.powf(1.0 - alpha) - inner.powf(1.0 - alpha)) / (rho * k * (1.0 - alpha))
    }
}

/// `mu(z - w) int_0^1 f(t w + (1 - t) z)^-1 dt`.
pub fn straight_upper_bound(z: &[f64], w: &[f64], f: &AlphaWeightFunction, mu: &NormSpec) -> Result<f64> {
    segment_d_length(f, mu, z, w, numeric::gauss16())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SandwichReport {
    pub phi: f64,
    pub d_numeric: f64,
    pub upper: f64,
    pub tolerance: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub rho_upper: f64,
    pub kappa_upper: f64,
    pub step: f64,
}

pub fn sandwich_check(f: &AlphaWeightFunction, mu: &NormSpec, z: &[f64], w: &[f64], step: f64) -> Result<SandwichReport> {
    let shape = compute_shape_constants(mu, f.dim, 256)?;
    let phi = phi_lower_bound(z, w, f.alpha, shape.rho_upper, f.kappa_upper, mu);
    let upper = straight_upper_bound(z, w, f, mu)?;
    let rep = d_distance_auto(z, w, f, mu, step)?;
    let tol = rep.error_budget;
    Ok(SandwichReport {
        phi,
        d_numeric: rep.value,
        upper,
        tolerance: tol,
        lower_ok: phi - tol <= rep.value,
        upper_ok: rep.value <= upper + tol,
        rho_upper: shape.rho_upper,
        kappa_upper: f.kappa_upper,
        step,
    })
}

// ---------------------------------------------------------------------------
// D-balls

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DBall {
    pub radius: f64,
    pub dim: usize,
    /// Unit directions, in angular order in the plane.
    pub directions: Vec<Vec<f64>>,
    /// `r(u)` with `D(0, r(u) u) = radius`.
    pub radii: Vec<f64>,
    pub center_rule: String,
    pub grid_step: f64,
    pub box_halfwidth: f64,
    pub stencil_factor: f64,
    pub bisection_tol: f64,
}

impl DBall {
    /// Boundary points `r(u) u`.
    pub fn boundary_polyline(&self) -> Vec<Vec<f64>> {
        self.directions
            .iter()
            .zip(&self.radii)
            .map(|(u, r)| u.iter().map(|x| r * x).collect())
            .collect()
    }

    /// Convexity of the boundary polygon (plane only; reported, never
    /// required).
    pub fn is_convex(&self) -> Option<bool> {
        if self.dim != 2 {
            return None;
        }
        let angles: Vec<f64> = self
            .directions
            .iter()
            .map(|u| u[1].atan2(u[0]).rem_euclid(2.0 * PI))
            .collect();
        Some(polygon_is_convex(&angles, &self.radii, 1e-9 * self.radius))
    }

    pub fn csv_header(dim: usize) -> &'static str {
        if dim == 2 {
            "ux,uy,r"
        } else {
            "ux,uy,uz,r"
        }
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{}", Self::csv_header(self.dim))?;
        for (u, r) in self.directions.iter().zip(&self.radii) {
            for x in u {
                write!(out, "{x:?},")?;
            }
            writeln!(out, "{r:?}")?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut out)?;
        out.flush()?;
        Ok(())
    }

    /// Directions and radii from a boundary CSV.
    pub fn load_csv(path: &Path) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut lines = file.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty ball file".into()))??;
        let dim = match header.trim() {
            "ux,uy,r" => 2,
            "ux,uy,uz,r" => 3,
            h => return Err(Error::Parse(format!("bad ball header '{h}'"))),
        };
        let (mut dirs, mut radii) = (Vec::new(), Vec::new());
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .trim()
                .split(',')
                .map(|p| p.parse().map_err(|_| Error::Parse(format!("bad ball row '{line}'"))))
                .collect::<Result<_>>()?;
            if vals.len() != dim + 1 {
                return Err(Error::Parse(format!("bad ball row '{line}'")));
            }
            dirs.push(vals[..dim].to_vec());
            radii.push(vals[dim]);
        }
        Ok((dirs, radii))
    }
}

/// Radius along `u` at which the radial ray alone has D-length `radius`.
fn ray_radius(f: &AlphaWeightFunction, mu: &NormSpec, u: &[f64], radius: f64) -> f64 {
    let unit = mu.eval(u) / (f.eval(u) * (1.0 - f.alpha));
    (radius / unit).powf(1.0 / (1.0 - f.alpha))
}

/// Options for [`trace_d_ball_with`].
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct BallOptions {
    /// Grid cells per half-width of the box.
    pub cells: usize,
}

impl Default for BallOptions {
    fn default() -> Self {
        BallOptions { cells: 200 }
    }
}

pub fn trace_d_ball(f: &AlphaWeightFunction, mu: &NormSpec, radius: f64, angular_resolution: usize) -> Result<DBall> {
    let cells = if f.dim == 3 { 40 } else { BallOptions::default().cells };
    trace_d_ball_with(f, mu, radius, angular_resolution, BallOptions { cells })
}

/// Trace the D-ball of the given radius around 0. Every grid node starts at
/// the D-length of its radial ray, an upper bound for `D(0, node)`; a
/// multi-source grid solve then relaxes these values along grid paths. Off
/// the grid, `D(0, p)` is the smaller of the ray value and the best cell
/// corner plus its segment. Each direction's radius is found by bisection.
pub fn trace_d_ball_with(f: &AlphaWeightFunction, mu: &NormSpec, radius: f64, angular_resolution: usize, opts: BallOptions) -> Result<DBall> {
    if !(f.alpha < 1.0) {
        return Err(Error::Precondition("D-balls around 0 are traced only for alpha < 1".into()));
    }
    if !(radius > 0.0) {
        return Err(Error::Precondition("ball radius must be positive".into()));
    }
    if !(2..=3).contains(&f.dim) {
        return Err(Error::UnsupportedDimension(f.dim));
    }
    if angular_resolution < 8 {
        return Err(Error::Precondition("angular_resolution must be at least 8".into()));
    }
    let dim = f.dim;
    let directions = numeric::sphere_directions(dim, angular_resolution);
    let probe = numeric::sphere_directions(dim, 4096);
    let r_max = probe
        .iter()
        .chain(&directions)
        .map(|u| ray_radius(f, mu, u, radius))
        .fold(0.0, f64::max);
    let mut half = 1.5 * r_max;
    loop {
        match trace_in_box(f, mu, radius, &directions, half, opts.cells)? {
            Some(radii) => {
                return Ok(DBall {
                    radius,
                    dim,
                    directions,
                    radii,
                    center_rule: "grid nodes seeded with exact radial-ray D-lengths".into(),
                    grid_step: half / opts.cells as f64,
                    box_halfwidth: half,
                    stencil_factor: stencil_factor(dim),
                    bisection_tol: BALL_BISECTION_TOL,
                })
            }
            None => half *= 2.0,
        }
    }
}

/// Radii per direction, or `None` if some radius reaches 90% of the box.
fn trace_in_box(f: &AlphaWeightFunction, mu: &NormSpec, radius: f64, directions: &[Vec<f64>], half: f64, cells: usize) -> Result<Option<Vec<f64>>> {
    let dim = f.dim;
    let step = half / cells as f64;
    let grid = GeodesicGrid::new(&vec![-half; dim], &vec![half; dim], step, Region::Everywhere)?;
    let sources: Vec<(usize, f64)> = (0..grid.node_count())
        .filter_map(|i| {
            let p = grid.point(i);
            let p = &p[..dim];
            grid.raw_in_domain(p).then(|| (i, ray_d_length(f, mu, p)))
        })
        .collect();
    let (sol, _) = grid.solve(f, mu, &sources, &[], false)?;
    let value = |p: &[f64]| -> f64 {
        let mut best = ray_d_length(f, mu, p);
        for c in grid.cell_nodes(p) {
            let q = grid.point(c);
            let v = sol.dist[c] + snap_segment(f, mu, &q[..dim], p);
            best = best.min(v);
        }
        best
    };
    let limit = 0.9 * half;
    let mut radii = Vec::with_capacity(directions.len());
    for u in directions {
        let at = |r: f64| -> f64 {
            let p: Vec<f64> = u.iter().map(|x| r * x).collect();
            value(&p)
        };
        let mut lo = ray_radius(f, mu, u, radius);
        if lo >= limit {
            return Ok(None);
        }
        let mut hi = (lo * 1.25).min(limit);
        while at(hi) <= radius {
            if hi >= limit {
                return Ok(None);
            }
            lo = hi;
            hi = (hi * 1.5).min(limit);
        }
        let mut iter = 0;
        while hi - lo > BALL_BISECTION_TOL && iter < BALL_BISECTION_MAX_ITER {
            let mid = 0.5 * (lo + hi);
            if at(mid) <= radius {
                lo = mid;
            } else {
                hi = mid;
            }
            iter += 1;
        }
        radii.push(0.5 * (lo + hi));
    }
    Ok(Some(radii))
}

// ---------------------------------------------------------------------------
// Cylinder closed forms

/// `D(boundary Q_s, q boundary Q_s) = (1 - q^(1-alpha)) / (kappa_upper_s (alpha - 1))`.
pub fn cylinder_distance_closed_form(q: f64, alpha: f64, kappa_upper_s: f64) -> Result<f64> {
    if !(q > 1.0) || !(alpha > 1.0) || !(kappa_upper_s > 0.0) {
        return Err(Error::Precondition("need q > 1, alpha > 1 and kappa_upper_s > 0".into()));
    }
    Ok((1.0 - q.powf(1.0 - alpha)) / (kappa_upper_s * (alpha - 1.0)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeBounds {
    pub upper: f64,
    pub ball_lower: f64,
    pub global_lower: f64,
}

/// Upper bound to reach `q` times a flat face, and the lower bounds for
/// reaching the lateral part of `q` times the cylinder boundary, with and
/// without the restriction to the `nu_s`-ball of radius `q + zeta`.
pub fn tube_distance_bounds(q: f64, alpha: f64, s: f64, zeta: f64, kappa_upper_s: f64, kappa_lower_s: f64) -> Result<TubeBounds> {
    if !(q > 1.0) || !(alpha > 1.0) || !(s > 1.0) || !(zeta >= 0.0) {
        return Err(Error::Precondition("need q > 1, alpha > 1, s > 1 and zeta >= 0".into()));
    }
    if !(kappa_upper_s > 0.0 && kappa_lower_s > 0.0) {
        return Err(Error::Precondition("kappa bounds must be positive".into()));
    }
    let face = cylinder_distance_closed_form(q, alpha, kappa_upper_s)?;
    let k = kappa_upper_s;
    let qz = q + zeta;
    Ok(TubeBounds {
        upper: face + 1.0 / kappa_lower_s,
        ball_lower: (1.0 - qz.powf(1.0 - alpha)) / (k * (alpha - 1.0))
            + ((s - 1.0) * (q - 1.0) - zeta) / (k * qz.powf(alpha)),
        global_lower: (1.0 + q.powf(1.0 - alpha) - 2f64.powf(alpha) * (q + 1.0 + s * (q - 1.0)).powf(1.0 - alpha))
            / (k * (alpha - 1.0)),
    })
}

/// Path from `z` on the cylinder boundary along the axis to the nearer flat
/// face, then on to `q` times that face.
pub fn tube_upper_path(cyl: &CylinderNorm, z: &[f64], q: f64) -> Result<PLPath> {
    let (t, _) = cyl.terms(z);
    let sign = if t >= 0.0 { 1.0 } else { -1.0 };
    let x: Vec<f64> = cyl.axis.iter().map(|a| a * cyl.halfheight * sign).collect();
    // z + c x reaches the face at axial coordinate sign * h.
    let c_face = 1.0 - t.abs();
    let mut verts = vec![z.to_vec()];
    if c_face > 1e-15 {
        verts.push(z.iter().zip(&x).map(|(a, b)| a + c_face * b).collect());
    }
    let c = c_face + q - 1.0;
    verts.push(z.iter().zip(&x).map(|(a, b)| a + c * b).collect());
    PLPath::new(verts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::AdmissibleProfile;
    use crate::weights::SphereProfile;

    fn radial(alpha: f64, c: f64) -> AlphaWeightFunction {
        AlphaWeightFunction::constant(alpha, c, 2).unwrap()
    }

    const E: NormSpec = NormSpec::Euclidean;

    #[test]
    fn d_length_examples() {
        let f = radial(0.0, 1.0);
        let p = PLPath::segment(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((d_length(&p, &f, &E, 8).unwrap() - 5.0).abs() < 1e-12);
        let f = radial(2.0, 1.0);
        let p = PLPath::segment(&[1.0, 0.0], &[2.0, 0.0]).unwrap();
        assert!((d_length(&p, &f, &E, 8).unwrap() - 0.5).abs() < 1e-10);
        let f = radial(0.0, 2.0);
        let p = PLPath::new(vec![vec![1.0, 1.0], vec![2.0, 3.0], vec![-1.0, 0.5]]).unwrap();
        let l = p.mu_length(&E);
        assert!((d_length(&p, &f, &E, 8).unwrap() - l / 2.0).abs() < 1e-12);
        assert!(d_length(&p, &f, &E, 4).is_err());
        assert!(PLPath::new(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).is_err());
    }

    #[test]
    fn d_length_through_origin() {
        let f = radial(0.5, 1.0);
        let p = PLPath::segment(&[-1.0, 0.0], &[4.0, 0.0]).unwrap();
        // int_0^1 t^-1/2 + int_0^4 t^-1/2 = 2 + 4.
        assert!((d_length(&p, &f, &E, 8).unwrap() - 6.0).abs() < 1e-12);
        let g = radial(1.0, 1.0);
        assert!(matches!(d_length(&p, &g, &E, 8), Err(Error::Singularity(_))));
        // Ending near but not at the origin: adaptive panels converge.
        let q = PLPath::segment(&[1e-6, 0.0], &[1.0, 0.0]).unwrap();
        let exact = 2.0 * (1.0 - 1e-3);
        assert!((d_length(&q, &f, &E, 8).unwrap() - exact).abs() < 1e-8);
    }

    #[test]
    fn distance_examples() {
        let f = radial(0.0, 1.0);
        let g = GeodesicGrid::around(&[&[1.0, 0.0], &[4.0, 4.0]], 0.05, Region::Everywhere).unwrap();
        let d = d_distance(&[1.0, 0.0], &[4.0, 4.0], &f, &E, &g).unwrap();
        assert!((d - 5.0).abs() / 5.0 < 0.02, "{d}");
        assert!(d >= 5.0 - 1e-9);
        let f = radial(2.0, 1.0);
        let r = d_distance_auto(&[1.0, 0.0], &[2.0, 0.0], &f, &E, 0.02).unwrap();
        assert!((r.value - 0.5).abs() / 0.5 < 0.01);
        assert_eq!(d_distance(&[1.0, 0.3], &[1.0, 0.3], &f, &E, &g).unwrap(), 0.0);
        assert!(matches!(
            d_distance(&[100.0, 0.0], &[1.0, 0.0], &f, &E, &g),
            Err(Error::OutsideGrid(_))
        ));
    }

    #[test]
    fn restricted_examples() {
        let f = radial(0.0, 1.0);
        let z = [1.0, 0.2];
        let w = [-0.5, 1.1];
        let free = d_distance_auto(&z, &w, &f, &E, 0.05).unwrap().value;
        let loose = Region::Annulus { norm: E, inner: 0.0, outer: 100.0 };
        let same = d_distance_restricted(&z, &w, &f, &E, loose, 0.05).unwrap().value;
        assert!((same - free).abs() < 1e-9);

        let outside = Region::NormExterior { norm: E, radius: 1.0 };
        let semi = d_distance_restricted(&[1.0, 0.0], &[-1.0, 0.0], &f, &E, outside, 0.01).unwrap();
        assert!((semi.value - PI).abs() / PI < 0.02, "{}", semi.value);
        assert!(semi.value >= PI - 1e-9);

        let band = Region::Intersection {
            parts: vec![
                Region::NormExterior { norm: NormSpec::Linf, radius: 0.5 },
                Region::NormBall { norm: NormSpec::Linf, radius: 0.6 },
            ],
        };
        let g = GeodesicGrid::new(&[-1.0, -1.0], &[1.0, 1.0], 0.05, band).unwrap();
        let d = d_distance(&[0.55, 0.0], &[0.0, 0.55], &f, &E, &g).unwrap();
        // Around the corner of the square band.
        assert!(d >= 2f64.sqrt() * 0.55 - 1e-9);
    }

    #[test]
    fn disconnected_domain_errors() {
        let f = radial(0.0, 1.0);
        // A ring thinner than the grid step holds isolated nodes only.
        let thin = Region::Annulus { norm: E, inner: 1.0, outer: 1.001 };
        let g = GeodesicGrid::around(&[&[1.0, 0.0], &[-1.0, 0.0]], 0.05, thin).unwrap();
        let r = d_distance(&[1.0, 0.0], &[-1.0, 0.0], &f, &E, &g);
        assert!(matches!(r, Err(Error::DisconnectedDomain)), "{r:?}");
    }

    #[test]
    fn scaling_examples() {
        let f = radial(2.0, 1.0);
        let r1 = scaling_check(&f, &E, &[1.0, 0.0], &[2.0, 0.0], 1.0, 0.02, true).unwrap();
        assert_eq!(r1.discrepancy, 0.0);
        let r2 = scaling_check(&f, &E, &[1.0, 0.0], &[2.0, 0.0], 2.0, 0.02, true).unwrap();
        assert!((r2.scaled - 0.25).abs() < 0.0025);
        assert!(r2.discrepancy < 1e-9);
        let g = AlphaWeightFunction::norm_power(NormSpec::L1, 0.0, 2).unwrap();
        let g = g.scaled_by(1.0).unwrap();
        let r3 = scaling_check(&g, &E, &[0.7, 0.2], &[-0.3, 1.0], 3.0, 0.02, false).unwrap();
        assert!(r3.discrepancy < 0.02, "{r3:?}");
    }

    #[test]
    fn sandwich_examples() {
        let f = radial(0.0, 1.0);
        let s = sandwich_check(&f, &E, &[1.0, 0.0], &[0.0, 2.0], 0.05).unwrap();
        assert!((s.phi - 5f64.sqrt()).abs() < 1e-12 && (s.upper - 5f64.sqrt()).abs() < 1e-12);
        assert!(s.lower_ok && s.upper_ok);
        let f = radial(1.0, 1.0);
        let s = sandwich_check(&f, &E, &[1.0, 0.0], &[std::f64::consts::E, 0.0], 0.02).unwrap();
        assert!((s.phi - 1.0).abs() < 1e-12);
        assert!((s.upper - 1.0).abs() < 1e-10);
        assert!((s.d_numeric - 1.0).abs() < 0.01);
        assert!(s.lower_ok && s.upper_ok);
        let f = radial(2.0, 1.0);
        let s = sandwich_check(&f, &E, &[1.0, 0.0], &[2.0, 0.0], 0.02).unwrap();
        assert!((s.phi - 0.5).abs() < 1e-12);
        assert!(s.lower_ok && s.upper_ok);
        // Negative alpha uses the clamped branch.
        let f = radial(-1.0, 1.0);
        let s = sandwich_check(&f, &E, &[1.0, 0.0], &[0.0, 1.0], 0.02).unwrap();
        assert!(s.phi > 0.0 && s.lower_ok && s.upper_ok, "{s:?}");
    }

    /// Conformal oracle in the plane: for f = |z|^alpha and mu Euclidean,
    /// `D(z, w) = |z^b - w^b| / |b|` with `b = 1 - alpha` while the angle
    /// between the points times `|b|` stays below pi.
    fn conformal(z: [f64; 2], w: [f64; 2], alpha: f64) -> f64 {
        let b = 1.0 - alpha;
        let pw = |p: [f64; 2]| {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt().powf(b);
            let t = p[1].atan2(p[0]) * b;
            (r * t.cos(), r * t.sin())
        };
        let (a, c) = (pw(z), pw(w));
        ((a.0 - c.0).powi(2) + (a.1 - c.1).powi(2)).sqrt() / b.abs()
    }

    #[test]
    fn grid_matches_conformal_oracle() {
        for alpha in [-1.0, 0.5, 2.0] {
            let f = radial(alpha, 1.0);
            let (z, w) = ([1.0, 0.2], [0.3, 1.4]);
            let exact = conformal(z, w, alpha);
            let r = d_distance_auto(&z, &w, &f, &E, 0.02).unwrap();
            assert!(r.value >= exact * (1.0 - 1e-6), "{alpha}: {} < {exact}", r.value);
            assert!(r.value <= exact + r.error_budget, "{alpha}: {} vs {exact}", r.value);
            assert!((r.value - exact) / exact < 0.03);
        }
    }

    #[test]
    fn grid_convergence_in_h() {
        let f = radial(2.0, 1.0);
        let mut last = f64::INFINITY;
        for h in [0.1, 0.05, 0.025] {
            let d = d_distance_auto(&[1.0, 0.0], &[2.0, 0.0], &f, &E, h).unwrap();
            assert!(d.value <= last + d.snap_z + d.snap_w + 1e-12);
            assert!(d.value >= 0.5 - 1e-9);
            last = d.value;
        }
    }

    #[test]
    fn grid_metric_axioms() {
        let f = AlphaWeightFunction::new(
            0.5,
            SphereProfile::NormPower { norm: NormSpec::L1, exponent: 1.0, scale: 1.0 },
            2,
        )
        .unwrap();
        let pts = [[1.0, 0.3], [-0.4, 1.2], [0.2, -1.1]];
        let grid = GeodesicGrid::around(&[&pts[0], &pts[1], &pts[2]], 0.05, Region::Everywhere).unwrap();
        let d = |a: &[f64; 2], b: &[f64; 2]| d_distance_report(a, b, &f, &E, &grid).unwrap();
        let ab = d(&pts[0], &pts[1]);
        let ba = d(&pts[1], &pts[0]);
        assert!((ab.value - ba.value).abs() <= 1e-12 * ab.value);
        let bc = d(&pts[1], &pts[2]);
        let ac = d(&pts[0], &pts[2]);
        let snap = 2.0 * (ab.snap_w + bc.snap_z);
        assert!(ac.value <= ab.value + bc.value + snap);
    }

    #[test]
    fn ball_examples() {
        let f = radial(0.0, 1.0);
        let b = trace_d_ball(&f, &E, 1.0, 64).unwrap();
        assert!(b.radii.iter().all(|r| (r - 1.0).abs() < 0.02));
        let f = radial(0.5, 1.0);
        let b = trace_d_ball(&f, &E, 1.0, 64).unwrap();
        assert!(b.radii.iter().all(|r| (r - 0.25).abs() / 0.25 < 0.02), "{:?}", b.radii);
        assert_eq!(b.is_convex(), Some(true));
        let big = trace_d_ball(&f, &E, 2f64.powf(0.5), 64).unwrap();
        for (a, c) in b.radii.iter().zip(&big.radii) {
            assert!((c - 2.0 * a).abs() / (2.0 * a) < 0.02);
        }
        assert!(trace_d_ball(&radial(1.0, 1.0), &E, 1.0, 64).is_err());
    }

    #[test]
    fn ball_for_anisotropic_profile_is_star_shaped_and_scales() {
        let f = AlphaWeightFunction::norm_power(NormSpec::L1, 0.3, 2).unwrap();
        let a = trace_d_ball_with(&f, &E, 1.0, 48, BallOptions { cells: 120 }).unwrap();
        let b = trace_d_ball_with(&f, &E, 2f64.powf(0.7), 48, BallOptions { cells: 120 }).unwrap();
        for (x, y) in a.radii.iter().zip(&b.radii) {
            assert!(*x > 0.0);
            assert!((y - 2.0 * x).abs() / (2.0 * x) < 0.02, "{x} {y}");
        }
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ball.csv");
        a.save_csv(&p).unwrap();
        let (dirs, radii) = DBall::load_csv(&p).unwrap();
        assert_eq!(dirs, a.directions);
        assert_eq!(radii, a.radii);
    }

    #[test]
    fn closed_form_examples() {
        assert!((cylinder_distance_closed_form(2.0, 2.0, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let mut last = 0.0;
        for q in [2.0, 10.0, 100.0, 1e4, 1e8] {
            let v = cylinder_distance_closed_form(q, 2.0, 1.0).unwrap();
            assert!(v > last && v < 1.0);
            last = v;
        }
        assert!((last - 1.0).abs() < 1e-7);
        assert!((cylinder_distance_closed_form(2.0, 3.0, 2.0).unwrap() - 0.1875).abs() < 1e-15);
        assert!(cylinder_distance_closed_form(1.0, 2.0, 1.0).is_err());
        let t = tube_distance_bounds(2.0, 2.0, 2.0, 0.0, 1.0, 1.0).unwrap();
        assert!((t.upper - 1.5).abs() < 1e-15);
        assert!((t.global_lower - 0.7).abs() < 1e-15);
        assert!((t.ball_lower - 0.75).abs() < 1e-15);
        assert!(tube_distance_bounds(2.0, 2.0, 1.0, 0.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn face_distance_on_grid_matches_closed_form() {
        let (alpha, q, s, k) = (2.0, 2.0, 2.0, 1.0);
        let cyl = CylinderNorm::standard(vec![1.0, 0.0], 1.0, s).unwrap();
        let prof = AdmissibleProfile::constant(cyl.clone(), alpha, k).unwrap();
        let f = prof.weight().unwrap();
        let h = 0.02f64.min((q - 1.0) / 50.0);
        let grid = GeodesicGrid::new(&[-q - 0.1, -s * q - 0.1], &[q + 0.1, s * q + 0.1], h, Region::Everywhere).unwrap();
        let d = d_set_distance(&f, &E, &grid, |p| cyl.eval(p) <= 1.0 + 1e-12, |p| cyl.eval(p) >= q - 1e-12).unwrap();
        let exact = cylinder_distance_closed_form(q, alpha, k).unwrap();
        assert!((d - exact).abs() / exact < 0.015, "{d} vs {exact}");
    }

    #[test]
    fn tube_upper_path_cost() {
        let cyl = CylinderNorm::standard(vec![1.0, 0.0], 1.0, 2.0).unwrap();
        let f = AdmissibleProfile::constant(cyl.clone(), 2.0, 1.0).unwrap().weight().unwrap();
        let bound = tube_distance_bounds(2.0, 2.0, 2.0, 0.0, 1.0, 1.0).unwrap().upper;
        for k in 0..50 {
            let a = 2.0 * PI * k as f64 / 50.0;
            let u = [a.cos(), a.sin()];
            let n = cyl.eval(&u);
            let z = [u[0] / n, u[1] / n];
            let p = tube_upper_path(&cyl, &z, 2.0).unwrap();
            let end = p.vertices.last().unwrap();
            assert!((cyl.terms(end).0.abs() - 2.0).abs() < 1e-12);
            let l = d_length(&p, &f, &E, 16).unwrap();
            assert!(l <= bound + 1e-9, "{z:?}: {l}");
        }
    }

    #[test]
    fn stencil_factors() {
        assert_eq!(stencil_offsets(2).len(), 16);
        assert_eq!(stencil_offsets(3).len(), 26);
        assert!((stencil_factor(2) - 1.027_51).abs() < 1e-4);
        let f3 = stencil_factor(3);
        assert!(f3 > 1.0 && f3 < 1.2, "{f3}");
    }
}
