//! Integer lattice primitives: vertices and nearest-neighbour edges of `Z^d`,
//! edge midpoints and cluster boundaries.
//!
//! Dimension is carried by every [`Vertex`] and must be the same throughout a
//! run. It is capped at [`MAX_DIM`].

use std::fmt;
use std::hash::{Hash, Hasher};

use rustc_hash::FxHashSet;

use crate::error::{Error, Result};

/// Largest supported lattice dimension.
pub const MAX_DIM: usize = 4;

/// A point of `Z^d`. Coordinates beyond `dim` are always zero.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Vertex {
    coords: [i32; MAX_DIM],
    dim: u8,
}

impl Vertex {
    pub fn new(coords: &[i32]) -> Result<Self> {
        check_dim(coords.len())?;
        let mut c = [0; MAX_DIM];
        c[..coords.len()].copy_from_slice(coords);
        Ok(Vertex {
            coords: c,
            dim: coords.len() as u8,
        })
    }

    pub fn origin(dim: usize) -> Result<Self> {
        check_dim(dim)?;
        Ok(Vertex {
            coords: [0; MAX_DIM],
            dim: dim as u8,
        })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim as usize
    }

    #[inline]
    pub fn coords(&self) -> &[i32] {
        &self.coords[..self.dim as usize]
    }

    #[inline]
    pub fn coord(&self, axis: usize) -> i32 {
        self.coords[axis]
    }

    pub fn is_origin(&self) -> bool {
        self.coords.iter().all(|&c| c == 0)
    }

    /// Neighbour one unit along `axis` (positive if `forward`).
    #[inline]
    pub fn step(&self, axis: usize, forward: bool) -> Vertex {
        let mut v = *self;
        v.coords[axis] += if forward { 1 } else { -1 };
        v
    }

    /// Real coordinates, padded with zeros to `MAX_DIM`.
    #[inline]
    pub fn to_real(&self) -> [f64; MAX_DIM] {
        let mut p = [0.0; MAX_DIM];
        for (x, &c) in p.iter_mut().zip(&self.coords) {
            *x = c as f64;
        }
        p
    }

    pub fn euclidean_norm(&self) -> f64 {
        self.coords
            .iter()
            .map(|&c| (c as f64) * (c as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Coordinate mixing used by every hash map keyed on vertices: coordinates
    /// are folded with an odd multiplier and a rotation, so that nearby
    /// lattice points land in unrelated buckets.
    #[inline]
    pub fn mix(&self) -> u64 {
        let mut h: u64 = self.dim as u64;
        for &c in &self.coords[..self.dim as usize] {
            h = (h.rotate_left(23) ^ (c as u32 as u64)).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        }
        h
    }
}

impl Hash for Vertex {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.mix());
    }
}

impl fmt::Debug for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.coords())
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.coords().iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

fn check_dim(dim: usize) -> Result<()> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::UnsupportedDimension(dim));
    }
    Ok(())
}

/// A nearest-neighbour edge, stored canonically as its lexicographically
/// smaller endpoint plus the axis along which the other endpoint lies one
/// unit higher.
///
/// The derived order is `(endpoint_a, axis)`; it is the tie-break order used
/// by the growth engine.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Edge {
    base: Vertex,
    axis: u8,
}

impl Edge {
    /// Build an edge from two endpoints in either order.
    pub fn new(a: Vertex, b: Vertex) -> Result<Self> {
        if a.dim != b.dim {
            return Err(Error::InvalidEdge(format!("dimension mismatch {a} {b}")));
        }
        let mut axis = None;
        for i in 0..a.dim() {
            let diff = b.coords[i] - a.coords[i];
            match diff {
                0 => {}
                1 | -1 if axis.is_none() => axis = Some((i, diff)),
                _ => return Err(Error::InvalidEdge(format!("{a} and {b} are not neighbours"))),
            }
        }
        match axis {
            Some((i, 1)) => Ok(Edge { base: a, axis: i as u8 }),
            Some((i, _)) => Ok(Edge { base: b, axis: i as u8 }),
            None => Err(Error::InvalidEdge(format!("{a} and {b} coincide"))),
        }
    }

    /// The edge from `base` to `base + e_axis`.
    #[inline]
    pub fn from_base(base: Vertex, axis: usize) -> Self {
        debug_assert!(axis < base.dim());
        Edge {
            base,
            axis: axis as u8,
        }
    }

    #[inline]
    pub fn endpoint_a(&self) -> Vertex {
        self.base
    }

    #[inline]
    pub fn endpoint_b(&self) -> Vertex {
        self.base.step(self.axis as usize, true)
    }

    #[inline]
    pub fn axis(&self) -> usize {
        self.axis as usize
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        *v == self.endpoint_a() || *v == self.endpoint_b()
    }

    /// Endpoint opposite to `v`; `v` must be an endpoint.
    #[inline]
    pub fn other(&self, v: &Vertex) -> Vertex {
        if *v == self.base {
            self.endpoint_b()
        } else {
            self.base
        }
    }

    /// Stable 64-bit key of the canonical form, used to key per-edge random
    /// draws.
    #[inline]
    pub fn key(&self) -> u64 {
        self.base.mix() ^ (self.axis as u64 + 1).wrapping_mul(0xD6E8_FEB8_6659_FD93)
    }
}

impl Hash for Edge {
    fn hash<H: Hasher>(&self, state: &mut H) {
        state.write_u64(self.key());
    }
}

impl fmt::Debug for Edge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}, {}}}", self.endpoint_a(), self.endpoint_b())
    }
}

/// Midpoint of an edge: all coordinates integral except one, which is a half
/// integer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Midpoint {
    coords: [f64; MAX_DIM],
    dim: u8,
}

impl Midpoint {
    #[inline]
    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim as usize]
    }
}

#[inline]
pub fn edge_midpoint(e: &Edge) -> Midpoint {
    let mut coords = e.base.to_real();
    coords[e.axis as usize] += 0.5;
    Midpoint { coords, dim: e.base.dim }
}

/// The `2d` edges containing `v`, ordered by axis and, within an axis, the
/// negative direction first.
pub fn incident_edges(v: &Vertex) -> Vec<Edge> {
    let mut out = Vec::with_capacity(2 * v.dim());
    for axis in 0..v.dim() {
        out.push(Edge::from_base(v.step(axis, false), axis));
        out.push(Edge::from_base(*v, axis));
    }
    out
}

/// Allocation-free variant of [`incident_edges`].
#[inline]
pub fn for_each_incident(v: &Vertex, mut f: impl FnMut(Edge)) {
    for axis in 0..v.dim() {
        f(Edge::from_base(v.step(axis, false), axis));
        f(Edge::from_base(*v, axis));
    }
}

/// Edges outside the cluster that share an endpoint with a cluster vertex.
pub fn boundary_edges(
    cluster_edges: &FxHashSet<Edge>,
    cluster_vertices: &FxHashSet<Vertex>,
) -> FxHashSet<Edge> {
    let mut out = FxHashSet::default();
    for v in cluster_vertices {
        for_each_incident(v, |e| {
            if !cluster_edges.contains(&e) {
                out.insert(e);
            }
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(c: &[i32]) -> Vertex {
        Vertex::new(c).unwrap()
    }

    #[test]
    fn midpoints() {
        let e = Edge::new(v(&[0, 0]), v(&[1, 0])).unwrap();
        assert_eq!(edge_midpoint(&e).coords(), &[0.5, 0.0]);
        let e = Edge::new(v(&[2, 4]), v(&[2, 3])).unwrap();
        assert_eq!(edge_midpoint(&e).coords(), &[2.0, 3.5]);
        let e = Edge::new(v(&[-1]), v(&[0])).unwrap();
        assert_eq!(edge_midpoint(&e).coords(), &[-0.5]);
    }

    #[test]
    fn canonical_orientation() {
        let e = Edge::new(v(&[3, 1]), v(&[2, 1])).unwrap();
        assert_eq!(e.endpoint_a(), v(&[2, 1]));
        assert_eq!(e.endpoint_b(), v(&[3, 1]));
        assert!(e.endpoint_a() < e.endpoint_b());
        assert_eq!(e, Edge::new(v(&[2, 1]), v(&[3, 1])).unwrap());
    }

    #[test]
    fn invalid_edges_rejected() {
        assert!(Edge::new(v(&[0, 0]), v(&[1, 1])).is_err());
        assert!(Edge::new(v(&[0, 0]), v(&[2, 0])).is_err());
        assert!(Edge::new(v(&[0, 0]), v(&[0, 0])).is_err());
        assert!(Edge::new(v(&[0]), v(&[0, 1])).is_err());
        assert!(Vertex::new(&[0; 5]).is_err());
        assert!(Vertex::new(&[]).is_err());
    }

    #[test]
    fn incident_order_and_count() {
        let es = incident_edges(&v(&[0, 0]));
        let others: Vec<Vertex> = es.iter().map(|e| e.other(&v(&[0, 0]))).collect();
        assert_eq!(
            others,
            vec![v(&[-1, 0]), v(&[1, 0]), v(&[0, -1]), v(&[0, 1])]
        );
        let es = incident_edges(&v(&[5]));
        assert_eq!(
            es,
            vec![
                Edge::new(v(&[4]), v(&[5])).unwrap(),
                Edge::new(v(&[5]), v(&[6])).unwrap()
            ]
        );
        assert_eq!(incident_edges(&v(&[1, -2, 7])).len(), 6);
    }

    #[test]
    fn boundary_examples() {
        let mut verts = FxHashSet::default();
        verts.insert(v(&[0, 0]));
        let b = boundary_edges(&FxHashSet::default(), &verts);
        assert_eq!(b.len(), 4);

        let mut verts = FxHashSet::default();
        verts.insert(v(&[0]));
        verts.insert(v(&[1]));
        let mut edges = FxHashSet::default();
        edges.insert(Edge::new(v(&[0]), v(&[1])).unwrap());
        let b = boundary_edges(&edges, &verts);
        let expect: FxHashSet<Edge> = [
            Edge::new(v(&[-1]), v(&[0])).unwrap(),
            Edge::new(v(&[1]), v(&[2])).unwrap(),
        ]
        .into_iter()
        .collect();
        assert_eq!(b, expect);

        // Neighbours of {(0,0),(1,0)}: 4 + 4 incident edges, minus the shared one counted twice.
        let mut verts = FxHashSet::default();
        verts.insert(v(&[0, 0]));
        verts.insert(v(&[1, 0]));
        let mut edges = FxHashSet::default();
        edges.insert(Edge::new(v(&[0, 0]), v(&[1, 0])).unwrap());
        assert_eq!(boundary_edges(&edges, &verts).len(), 6);
    }

    fn arb_vertex() -> impl Strategy<Value = Vertex> {
        (1usize..=4).prop_flat_map(|d| {
            proptest::collection::vec(-1000i32..1000, d).prop_map(|c| Vertex::new(&c).unwrap())
        })
    }

    proptest! {
        #[test]
        fn incident_round_trip(v in arb_vertex()) {
            let es = incident_edges(&v);
            prop_assert_eq!(es.len(), 2 * v.dim());
            for e in &es {
                prop_assert!(e.contains(&v));
                let m = edge_midpoint(e);
                let halves = m.coords().iter().filter(|c| (c.fract().abs() - 0.5).abs() < 1e-12).count();
                let ints = m.coords().iter().filter(|c| c.fract() == 0.0).count();
                prop_assert_eq!(halves, 1);
                prop_assert_eq!(ints, v.dim() - 1);
                // Every neighbour's incident list contains the same edge.
                let w = e.other(&v);
                prop_assert!(incident_edges(&w).contains(e));
            }
        }

        #[test]
        fn boundary_size_bounds(steps in proptest::collection::vec((0usize..2, any::<bool>()), 0..40)) {
            // Random connected cluster grown by walking.
            let mut cur = Vertex::origin(2).unwrap();
            let mut verts = FxHashSet::default();
            let mut edges = FxHashSet::default();
            verts.insert(cur);
            for (axis, fwd) in steps {
                let next = cur.step(axis, fwd);
                edges.insert(Edge::new(cur, next).unwrap());
                verts.insert(next);
                cur = next;
            }
            let b = boundary_edges(&edges, &verts);
            prop_assert!(b.len() <= 4 * verts.len());
            prop_assert!(!b.is_empty());
            for e in &b {
                prop_assert!(!edges.contains(e));
                prop_assert!(verts.contains(&e.endpoint_a()) || verts.contains(&e.endpoint_b()));
            }
        }
    }
}
