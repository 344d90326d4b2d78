//! Growth of f-weighted first-passage percolation clusters on `Z^d`.
//!
//! [`run_fpp`] is a Dijkstra-type event loop over edges: every edge `e`
//! carries one exponential draw `X_e` with rate `wt(e)`. When the first
//! endpoint of `e` is absorbed at time `T`, `e` enters the frontier with
//! tentative time `T + X_e` and keeps it until it is popped, whether or not the
//! second endpoint is absorbed in between. The draw for `e` is a pure
//! function of `(seed, e)`, so permuting the pop order cannot change it.
//!
//! [`run_eden_chain`] is the jump chain: each step absorbs a boundary edge
//! chosen with probability proportional to its weight, optionally with
//! `Exp(sum of boundary weights)` holding times.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{for_each_incident, Edge, Vertex, MAX_DIM};
use crate::numeric::splitmix64;
use crate::weights::{AlphaWeightFunction, NormSpec};

/// Default bound on the number of absorbed vertices.
pub const DEFAULT_VERTEX_CAP: usize = 50_000_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StopRule {
    /// Stop once `n` edges are absorbed.
    EdgeCount { n: usize },
    /// Cluster at time `t`: every edge with absorption time `<= t`.
    Time { t: f64 },
    /// First time an absorbed vertex has Euclidean norm `> r`.
    EuclidRadius { r: f64 },
    /// First time an absorbed vertex has `norm(v) > r`.
    NormRadius { r: f64, norm: NormSpec },
    /// First time the given vertex is absorbed.
    VertexHit { vertex: Vec<i32> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Checkpoint {
    /// After this many absorbed edges.
    Step { n: usize },
    /// State at this time.
    Time { t: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dimension: usize,
    pub weight: AlphaWeightFunction,
    pub seed: u64,
    pub stop_rule: StopRule,
    #[serde(default)]
    pub snapshot_schedule: Vec<Checkpoint>,
    #[serde(default = "default_cap")]
    pub vertex_cap: usize,
    /// Eden chain only: draw `Exp(sum wt)` holding times. Without them the
    /// clock counts steps.
    #[serde(default = "default_true")]
    pub holding_times: bool,
}

fn default_cap() -> usize {
    DEFAULT_VERTEX_CAP
}

fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn new(weight: AlphaWeightFunction, seed: u64, stop_rule: StopRule) -> Self {
        RunConfig {
            dimension: weight.dim,
            weight,
            seed,
            stop_rule,
            snapshot_schedule: Vec::new(),
            vertex_cap: DEFAULT_VERTEX_CAP,
            holding_times: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dimension != self.weight.dim {
            return Err(Error::Precondition(format!(
                "run dimension {} differs from weight dimension {}",
                self.dimension, self.weight.dim
            )));
        }
        if self.dimension == 0 || self.dimension > MAX_DIM {
            return Err(Error::UnsupportedDimension(self.dimension));
        }
        match &self.stop_rule {
            StopRule::EdgeCount { n } if *n == 0 => {
                Err(Error::Precondition("edge count must be at least 1".into()))
            }
            StopRule::Time { t } if !(*t >= 0.0 && t.is_finite()) => {
                Err(Error::Precondition("stop time must be finite and nonnegative".into()))
            }
            StopRule::EuclidRadius { r } | StopRule::NormRadius { r, .. } if !(*r >= 0.0 && r.is_finite()) => {
                Err(Error::Precondition("stop radius must be finite and nonnegative".into()))
            }
            StopRule::VertexHit { vertex } if vertex.len() != self.dimension => {
                Err(Error::Precondition("target vertex has the wrong dimension".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Copy of a cluster at a checkpoint: the first `edge_count` entries of the
/// edge log and the first `vertex_count` entries of the vertex log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub time: f64,
    pub edge_count: usize,
    pub vertex_count: usize,
}

#[derive(Clone, Copy, Debug)]
struct FrontierEntry {
    time: f64,
    edge: Edge,
}

impl PartialEq for FrontierEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for FrontierEntry {}
impl Ord for FrontierEntry {
    // Reversed so that the max-heap pops the earliest time, then the
    // smallest edge.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.edge.cmp(&self.edge))
    }
}
impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// The cluster `A_t` with absorption times, in absorption order.
#[derive(Clone, Debug)]
pub struct ClusterState {
    pub dim: usize,
    vertex_times: FxHashMap<Vertex, f64>,
    /// Absorbed vertices in absorption order, with `T(0, v)`.
    pub vertex_log: Vec<(Vertex, f64)>,
    /// Absorbed edges in absorption order, with their absorption times.
    pub edge_log: Vec<(Edge, f64)>,
    frontier: FrontierSet,
    /// Time of the last absorbed edge.
    pub clock: f64,
}

#[derive(Clone, Debug)]
enum FrontierSet {
    Heap(BinaryHeap<FrontierEntry>),
    Eden(EdenFrontier),
}

impl ClusterState {
    fn empty(dim: usize, frontier: FrontierSet) -> Self {
        ClusterState {
            dim,
            vertex_times: FxHashMap::default(),
            vertex_log: Vec::new(),
            edge_log: Vec::new(),
            frontier,
            clock: 0.0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.edge_log.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_log.len()
    }

    pub fn contains_vertex(&self, v: &Vertex) -> bool {
        self.vertex_times.contains_key(v)
    }

    pub fn vertex_time(&self, v: &Vertex) -> Option<f64> {
        self.vertex_times.get(v).copied()
    }

    pub fn vertex_set(&self) -> FxHashSet<Vertex> {
        self.vertex_log.iter().map(|(v, _)| *v).collect()
    }

    pub fn edge_set(&self) -> FxHashSet<Edge> {
        self.edge_log.iter().map(|(e, _)| *e).collect()
    }

    /// Edges currently in the frontier, sorted.
    pub fn frontier_edges(&self) -> Vec<Edge> {
        let mut out: Vec<Edge> = match &self.frontier {
            FrontierSet::Heap(h) => h.iter().map(|f| f.edge).collect(),
            FrontierSet::Eden(e) => e.live_edges(),
        };
        out.sort();
        out
    }

    /// Tentative absorption times of frontier edges (FPP runs only).
    pub fn frontier_times(&self) -> Vec<(Edge, f64)> {
        match &self.frontier {
            FrontierSet::Heap(h) => {
                let mut v: Vec<_> = h.iter().map(|f| (f.edge, f.time)).collect();
                v.sort_by(|a, b| a.0.cmp(&b.0));
                v
            }
            FrontierSet::Eden(_) => Vec::new(),
        }
    }

    /// The edges absorbed by a snapshot.
    pub fn snapshot_edges(&self, s: &Snapshot) -> &[(Edge, f64)] {
        &self.edge_log[..s.edge_count]
    }

    /// The vertices absorbed by a snapshot.
    pub fn snapshot_vertices(&self, s: &Snapshot) -> &[(Vertex, f64)] {
        &self.vertex_log[..s.vertex_count]
    }

    fn absorb_vertex(&mut self, v: Vertex, t: f64, cap: usize) -> Result<()> {
        if self.vertex_log.len() >= cap {
            return Err(Error::VertexCapExceeded { cap });
        }
        self.vertex_times.insert(v, t);
        self.vertex_log.push((v, t));
        Ok(())
    }

    fn snapshot(&self) -> Snapshot {
        Snapshot {
            time: self.clock,
            edge_count: self.edge_log.len(),
            vertex_count: self.vertex_log.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EdgeCount,
    Time,
    Radius,
    VertexHit,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub final_state: ClusterState,
    pub stop_time: f64,
    pub stop_reason: StopReason,
    /// For radius rules, the absorbed vertex that left the ball.
    pub exit_vertex: Option<Vertex>,
    pub snapshots: Vec<Snapshot>,
    pub rng_draw_count: u64,
}

/// `T(0, v)` if `v` was absorbed before the run stopped.
pub fn passage_time(result: &RunResult, v: &Vertex) -> Option<f64> {
    result.final_state.vertex_time(v)
}

/// Uniform draw in `(0, 1)` determined by `(seed, e)`.
#[inline]
pub fn edge_uniform(seed: u64, e: &Edge) -> f64 {
    let mut h = splitmix64(seed ^ 0x243F_6A88_85A3_08D3);
    for &c in e.endpoint_a().coords() {
        h = splitmix64(h ^ c as u32 as u64);
    }
    h = splitmix64(h ^ (e.axis() as u64 + 1).wrapping_mul(0x1000_0000_01B3));
    ((h >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// The passage time `X_e ~ Exp(wt(e))` used by [`run_fpp`].
#[inline]
pub fn edge_passage_draw(seed: u64, e: &Edge, weight: f64) -> f64 {
    -edge_uniform(seed, e).ln() / weight
}

/// Tracks checkpoints in the order they will be reached.
struct SnapshotPlan {
    steps: Vec<usize>,
    times: Vec<f64>,
    si: usize,
    ti: usize,
    taken: Vec<Snapshot>,
}

impl SnapshotPlan {
    fn new(schedule: &[Checkpoint]) -> Self {
        let mut steps = Vec::new();
        let mut times = Vec::new();
        for c in schedule {
            match *c {
                Checkpoint::Step { n } => steps.push(n),
                Checkpoint::Time { t } => times.push(t),
            }
        }
        steps.sort_unstable();
        times.sort_by(f64::total_cmp);
        SnapshotPlan {
            steps,
            times,
            si: 0,
            ti: 0,
            taken: Vec::new(),
        }
    }

    /// Called before absorbing an edge at `next_time`.
    fn before(&mut self, state: &ClusterState, next_time: f64) {
        while self.ti < self.times.len() && self.times[self.ti] < next_time {
            let mut s = state.snapshot();
            s.time = self.times[self.ti];
            self.taken.push(s);
            self.ti += 1;
        }
    }

    /// Called after each absorbed edge.
    fn after(&mut self, state: &ClusterState) {
        while self.si < self.steps.len() && self.steps[self.si] <= state.step_count() {
            if self.steps[self.si] == state.step_count() {
                self.taken.push(state.snapshot());
            }
            self.si += 1;
        }
    }

    /// Step checkpoints never reached are recorded at the final state; time
    /// checkpoints only if `t >= stop_time`.
    fn finish(mut self, state: &ClusterState, stop_time: f64, reason: &StopReason) -> Vec<Snapshot> {
        if *reason == StopReason::Time {
            while self.ti < self.times.len() && self.times[self.ti] <= stop_time {
                let mut s = state.snapshot();
                s.time = self.times[self.ti];
                self.taken.push(s);
                self.ti += 1;
            }
        }
        self.taken
    }
}

fn target_vertex(config: &RunConfig) -> Result<Option<Vertex>> {
    match &config.stop_rule {
        StopRule::VertexHit { vertex } => Ok(Some(Vertex::new(vertex)?)),
        _ => Ok(None),
    }
}

fn leaves_ball(rule: &StopRule, v: &Vertex) -> bool {
    match rule {
        StopRule::EuclidRadius { r } => {
            let n2: f64 = v.coords().iter().map(|&c| (c as f64) * (c as f64)).sum();
            n2 > r * r
        }
        StopRule::NormRadius { r, norm } => {
            let p = v.to_real();
            norm.eval(&p[..v.dim()]) > *r
        }
        _ => false,
    }
}

/// Reusable f-weighted FPP growth. [`run_fpp`] wraps it; replicate loops that
/// run many short growths can reuse one instance's allocations with
/// [`FppGrowth::reset`].
pub struct FppGrowth<'a> {
    weight: &'a AlphaWeightFunction,
    seed: u64,
    cap: usize,
    state: ClusterState,
    draws: u64,
}

impl<'a> FppGrowth<'a> {
    pub fn new(weight: &'a AlphaWeightFunction, seed: u64, cap: usize) -> Result<Self> {
        let mut g = FppGrowth {
            weight,
            seed,
            cap,
            state: ClusterState::empty(weight.dim, FrontierSet::Heap(BinaryHeap::new())),
            draws: 0,
        };
        g.reset(seed)?;
        Ok(g)
    }

    /// Restart from the root-only cluster with a new seed.
    pub fn reset(&mut self, seed: u64) -> Result<()> {
        self.seed = seed;
        self.draws = 0;
        let s = &mut self.state;
        s.vertex_times.clear();
        s.vertex_log.clear();
        s.edge_log.clear();
        s.clock = 0.0;
        match &mut s.frontier {
            FrontierSet::Heap(h) => h.clear(),
            f => *f = FrontierSet::Heap(BinaryHeap::new()),
        }
        let root = Vertex::origin(self.weight.dim)?;
        self.state.absorb_vertex(root, 0.0, self.cap)?;
        self.push_incident(root, 0.0);
        Ok(())
    }

    fn push_incident(&mut self, v: Vertex, t: f64) {
        let FrontierSet::Heap(heap) = &mut self.state.frontier else {
            unreachable!()
        };
        let times = &self.state.vertex_times;
        let (seed, weight) = (self.seed, self.weight);
        let mut draws = 0;
        for_each_incident(&v, |e| {
            // An edge whose other endpoint is absorbed is already queued.
            if !times.contains_key(&e.other(&v)) {
                let x = edge_passage_draw(seed, &e, weight.edge_weight(&e));
                draws += 1;
                heap.push(FrontierEntry { time: t + x, edge: e });
            }
        });
        self.draws += draws;
    }

    pub fn state(&self) -> &ClusterState {
        &self.state
    }

    /// Tentative time of the next absorption.
    pub fn peek_time(&self) -> f64 {
        match &self.state.frontier {
            FrontierSet::Heap(h) => h.peek().map_or(f64::INFINITY, |f| f.time),
            FrontierSet::Eden(_) => unreachable!(),
        }
    }

    /// Absorb the next edge. Returns it, its time and the newly absorbed
    /// vertex, if any.
    pub fn step(&mut self) -> Result<(Edge, f64, Option<Vertex>)> {
        let FrontierSet::Heap(heap) = &mut self.state.frontier else {
            unreachable!()
        };
        let FrontierEntry { time, edge } = heap.pop().expect("frontier of Z^d is never empty");
        self.state.clock = time;
        self.state.edge_log.push((edge, time));
        let (a, b) = (edge.endpoint_a(), edge.endpoint_b());
        let fresh = if !self.state.contains_vertex(&a) {
            Some(a)
        } else if !self.state.contains_vertex(&b) {
            Some(b)
        } else {
            None
        };
        if let Some(v) = fresh {
            self.state.absorb_vertex(v, time, self.cap)?;
            self.push_incident(v, time);
        }
        Ok((edge, time, fresh))
    }

    pub fn into_state(self) -> (ClusterState, u64) {
        (self.state, self.draws)
    }

    pub fn draw_count(&self) -> u64 {
        self.draws
    }
}

/// Grow an f-weighted FPP cluster until the stop rule fires.
pub fn run_fpp(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    let target = target_vertex(config)?;
    let mut g = FppGrowth::new(&config.weight, config.seed, config.vertex_cap)?;
    let mut plan = SnapshotPlan::new(&config.snapshot_schedule);
    plan.after(g.state());
    let (stop_time, reason, exit_vertex) = loop {
        let next = g.peek_time();
        if let StopRule::Time { t } = config.stop_rule {
            if next > t {
                break (t, StopReason::Time, None);
            }
        }
        plan.before(g.state(), next);
        let (_, time, fresh) = g.step()?;
        plan.after(g.state());
        if let Some(v) = fresh {
            if leaves_ball(&config.stop_rule, &v) {
                break (time, StopReason::Radius, Some(v));
            }
            if target == Some(v) {
                break (time, StopReason::VertexHit, None);
            }
        }
        if let StopRule::EdgeCount { n } = config.stop_rule {
            if g.state().step_count() >= n {
                break (time, StopReason::EdgeCount, None);
            }
        }
    };
    let snapshots = plan.finish(g.state(), stop_time, &reason);
    let (final_state, rng_draw_count) = g.into_state();
    Ok(RunResult {
        final_state,
        stop_time,
        stop_reason: reason,
        exit_vertex,
        snapshots,
        rng_draw_count,
    })
}

// ---------------------------------------------------------------------------
// Eden chain

/// Boundary edges with weights in a Fenwick tree. Removed edges leave a zero
/// slot; the tree is compacted when half the slots are dead.
#[derive(Clone, Debug, Default)]
struct EdenFrontier {
    edges: Vec<Edge>,
    weights: Vec<f64>,
    tree: Vec<f64>,
    slot: FxHashMap<Edge, usize>,
    dead: usize,
}

impl EdenFrontier {
    fn live_edges(&self) -> Vec<Edge> {
        self.edges
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(e, _)| *e)
            .collect()
    }

    fn push(&mut self, e: Edge, w: f64) {
        let i = self.edges.len();
        self.edges.push(e);
        self.weights.push(w);
        self.tree.push(0.0);
        // Fenwick slot i covers (i - lowbit(i + 1), i].
        let k = i + 1;
        let low = k & k.wrapping_neg();
        let mut sum = w;
        let mut j = k - 1;
        while j > k - low {
            sum += self.tree[j - 1];
            j -= j & j.wrapping_neg();
        }
        self.tree[i] = sum;
        self.slot.insert(e, i);
    }

    fn add(&mut self, i: usize, delta: f64) {
        let mut k = i + 1;
        while k <= self.tree.len() {
            self.tree[k - 1] += delta;
            k += k & k.wrapping_neg();
        }
    }

    fn remove(&mut self, e: &Edge) {
        if let Some(i) = self.slot.remove(e) {
            let w = self.weights[i];
            self.weights[i] = 0.0;
            self.add(i, -w);
            self.dead += 1;
        }
        if self.dead > 64 && self.dead * 2 > self.edges.len() {
            self.compact();
        }
    }

    fn compact(&mut self) {
        let (edges, weights): (Vec<_>, Vec<_>) = self
            .edges
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(e, w)| (*e, *w))
            .unzip();
        self.edges.clear();
        self.weights.clear();
        self.tree.clear();
        self.slot.clear();
        self.dead = 0;
        for (e, w) in edges.into_iter().zip(weights) {
            self.push(e, w);
        }
    }

    /// Sum of live weights, recomputed exactly.
    fn total_exact(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// Smallest slot whose prefix sum exceeds `target`.
    fn find(&self, mut target: f64) -> usize {
        let n = self.tree.len();
        let mut pos = 0;
        let mut bit = n.next_power_of_two();
        while bit > 0 {
            let next = pos + bit;
            if next <= n && self.tree[next - 1] <= target {
                pos = next;
                target -= self.tree[next - 1];
            }
            bit >>= 1;
        }
        // Dead slots have zero weight; skip forward to a live one.
        let mut i = pos.min(n - 1);
        while self.weights[i] == 0.0 {
            i = if i + 1 < n { i + 1 } else { self.last_live() };
        }
        i
    }

    fn last_live(&self) -> usize {
        (0..self.weights.len())
            .rev()
            .find(|&i| self.weights[i] > 0.0)
            .expect("frontier of Z^d is never empty")
    }
}

/// Selection probabilities `wt(e) / sum wt` over the given boundary edges.
pub fn selection_probabilities(weight: &AlphaWeightFunction, boundary: &[Edge]) -> Vec<f64> {
    let w: Vec<f64> = boundary.iter().map(|e| weight.edge_weight(e)).collect();
    normalize_weights(&w)
}

/// `w_i / sum w`.
pub fn normalize_weights(w: &[f64]) -> Vec<f64> {
    let s: f64 = w.iter().sum();
    w.iter().map(|x| x / s).collect()
}

/// Run the weighted Eden chain. Radius and vertex rules stop at the step that
/// first absorbs the qualifying vertex; a time rule needs holding times.
pub fn run_eden_chain(config: &RunConfig) -> Result<RunResult> {
    config.validate()?;
    if matches!(config.stop_rule, StopRule::Time { .. }) && !config.holding_times {
        return Err(Error::Precondition(
            "a time stop rule needs holding times in the Eden chain".into(),
        ));
    }
    let target = target_vertex(config)?;
    let weight = &config.weight;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut draws = 0u64;
    let mut state = ClusterState::empty(config.dimension, FrontierSet::Eden(EdenFrontier::default()));
    let root = Vertex::origin(config.dimension)?;

    fn add_vertex(
        state: &mut ClusterState,
        v: Vertex,
        t: f64,
        weight: &AlphaWeightFunction,
        cap: usize,
    ) -> Result<()> {
        state.absorb_vertex(v, t, cap)?;
        let FrontierSet::Eden(fr) = &mut state.frontier else {
            unreachable!()
        };
        let times = &state.vertex_times;
        for_each_incident(&v, |e| {
            if !times.contains_key(&e.other(&v)) {
                fr.push(e, weight.edge_weight(&e));
            }
        });
        Ok(())
    }

    add_vertex(&mut state, root, 0.0, weight, config.vertex_cap)?;
    let mut plan = SnapshotPlan::new(&config.snapshot_schedule);
    plan.after(&state);
    let mut steps_since_refresh = 0usize;
    let mut total = {
        let FrontierSet::Eden(fr) = &state.frontier else {
            unreachable!()
        };
        fr.total_exact()
    };
    let (stop_time, reason, exit_vertex) = loop {
        let FrontierSet::Eden(fr) = &mut state.frontier else {
            unreachable!()
        };
        // Refresh the running total against drift in the tree sums.
        if steps_since_refresh >= 4096 {
            total = fr.total_exact();
            fr.compact();
            steps_since_refresh = 0;
        }
        let next_time = if config.holding_times {
            let u: f64 = 1.0 - rng.random::<f64>();
            draws += 1;
            state.clock - u.ln() / total
        } else {
            state.step_count() as f64 + 1.0
        };
        if let StopRule::Time { t } = config.stop_rule {
            if next_time > t {
                break (t, StopReason::Time, None);
            }
        }
        plan.before(&state, next_time);
        let FrontierSet::Eden(fr) = &mut state.frontier else {
            unreachable!()
        };
        let u: f64 = rng.random::<f64>();
        draws += 1;
        let i = fr.find(u * total);
        let e = fr.edges[i];
        let w = fr.weights[i];
        fr.remove(&e);
        total -= w;
        steps_since_refresh += 1;
        state.clock = next_time;
        state.edge_log.push((e, next_time));
        let (a, b) = (e.endpoint_a(), e.endpoint_b());
        let fresh = if !state.contains_vertex(&a) {
            Some(a)
        } else if !state.contains_vertex(&b) {
            Some(b)
        } else {
            None
        };
        if let Some(v) = fresh {
            let before = match &state.frontier {
                FrontierSet::Eden(fr) => fr.edges.len(),
                _ => unreachable!(),
            };
            add_vertex(&mut state, v, next_time, weight, config.vertex_cap)?;
            if let FrontierSet::Eden(fr) = &state.frontier {
                total += fr.weights[before.min(fr.weights.len())..].iter().sum::<f64>();
            }
        }
        plan.after(&state);
        if let Some(v) = fresh {
            if leaves_ball(&config.stop_rule, &v) {
                break (next_time, StopReason::Radius, Some(v));
            }
            if target == Some(v) {
                break (next_time, StopReason::VertexHit, None);
            }
        }
        if let StopRule::EdgeCount { n } = config.stop_rule {
            if state.step_count() >= n {
                break (next_time, StopReason::EdgeCount, None);
            }
        }
    };
    let snapshots = plan.finish(&state, stop_time, &reason);
    Ok(RunResult {
        final_state: state,
        stop_time,
        stop_reason: reason,
        exit_vertex,
        snapshots,
        rng_draw_count: draws,
    })
}

// ---------------------------------------------------------------------------
// Explosion time

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TauInfinityReport {
    pub radii: Vec<f64>,
    /// `sigma_r` for each radius of the schedule; nondecreasing.
    pub sigma: Vec<f64>,
    /// `E` of the time to cross each radius along the best coordinate ray
    /// alone, an upper bound for `E[sigma_r]`.
    pub ray_bounds: Vec<f64>,
    /// Expected time to run along the best coordinate ray to infinity, an
    /// upper bound for `E[tau_infinity]`.
    pub ray_bound_infinity: f64,
    pub ray_direction: Vec<i32>,
}

/// Terms summed exactly before the tail integral in the infinite ray bound.
const RAY_TERMS: usize = 100_000;

/// `sum_k 1/f((k + 1/2) e)` along a coordinate ray `e` for `k < n`.
fn ray_partial_sum(f: &AlphaWeightFunction, dir: &[f64], n: usize) -> f64 {
    let mut p = [0.0; MAX_DIM];
    (0..n)
        .map(|k| {
            let t = k as f64 + 0.5;
            for (pi, di) in p.iter_mut().zip(dir) {
                *pi = t * di;
            }
            1.0 / f.eval(&p[..dir.len()])
        })
        .sum()
}

/// Lower bounds `sigma_r` for the explosion time over a radius schedule,
/// plus the expected travel time along a coordinate ray.
pub fn tau_infinity_estimate(config: &RunConfig, radius_schedule: &[f64]) -> Result<TauInfinityReport> {
    let f = &config.weight;
    if f.alpha <= 1.0 {
        return Err(Error::Precondition(
            "the explosion time is finite only for alpha > 1".into(),
        ));
    }
    if radius_schedule.is_empty() || radius_schedule.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Precondition("radius schedule must be strictly increasing".into()));
    }
    let dim = f.dim;
    // Unit coordinate ray with the smallest expected travel time.
    let mut best = (f64::INFINITY, vec![0i32; dim]);
    for axis in 0..dim {
        for sign in [1i32, -1] {
            let mut d = vec![0.0; dim];
            d[axis] = sign as f64;
            let s = ray_partial_sum(f, &d, 1000);
            if s < best.0 {
                let mut v = vec![0; dim];
                v[axis] = sign;
                best = (s, v);
            }
        }
    }
    let dir: Vec<f64> = best.1.iter().map(|&c| c as f64).collect();
    let f0 = f.profile_at(&dir);
    let tail = (RAY_TERMS as f64).powf(1.0 - f.alpha) / ((f.alpha - 1.0) * f0);
    let ray_bound_infinity = ray_partial_sum(f, &dir, RAY_TERMS) + tail;
    let ray_bounds = radius_schedule
        .iter()
        .map(|&r| ray_partial_sum(f, &dir, r.floor() as usize + 1))
        .collect();

    let mut cfg = config.clone();
    cfg.stop_rule = StopRule::EuclidRadius {
        r: *radius_schedule.last().unwrap(),
    };
    cfg.snapshot_schedule.clear();
    let run = run_fpp(&cfg)?;
    let sigma = sigma_from_log(&run.final_state, radius_schedule);
    Ok(TauInfinityReport {
        radii: radius_schedule.to_vec(),
        sigma,
        ray_bounds,
        ray_bound_infinity,
        ray_direction: best.1,
    })
}

/// First absorption time of a vertex with Euclidean norm `> r`, per radius.
pub fn sigma_from_log(state: &ClusterState, radii: &[f64]) -> Vec<f64> {
    let mut out = vec![f64::INFINITY; radii.len()];
    let mut next = 0;
    for (v, t) in &state.vertex_log {
        let n = v.euclidean_norm();
        while next < radii.len() && n > radii[next] {
            out[next] = *t;
            next += 1;
        }
        if next == radii.len() {
            break;
        }
    }
    // A larger radius can be crossed by the same vertex as a smaller one.
    for i in 1..out.len() {
        out[i] = out[i].max(out[i - 1]);
    }
    out
}

// ---------------------------------------------------------------------------
// Snapshot export

const AXIS_NAMES: [&str; MAX_DIM] = ["x", "y", "z", "w"];

/// CSV header for an edge log in dimension `dim`.
pub fn snapshot_csv_header(dim: usize) -> String {
    let mut h = String::from("step,time");
    for end in ["a", "b"] {
        for name in &AXIS_NAMES[..dim] {
            h.push_str(&format!(",{end}{name}"));
        }
    }
    h
}

/// One row per absorbed edge: `step,time,a...,b...` with `a < b`.
pub fn write_snapshot_csv(out: &mut impl Write, dim: usize, edges: &[(Edge, f64)]) -> Result<()> {
    writeln!(out, "{}", snapshot_csv_header(dim))?;
    for (i, (e, t)) in edges.iter().enumerate() {
        write!(out, "{},{:?}", i + 1, t)?;
        for v in [e.endpoint_a(), e.endpoint_b()] {
            for c in v.coords() {
                write!(out, ",{c}")?;
            }
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn save_snapshot_csv(path: &Path, dim: usize, edges: &[(Edge, f64)]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_snapshot_csv(&mut out, dim, edges)?;
    out.flush()?;
    Ok(())
}

pub fn load_snapshot_csv(path: &Path) -> Result<(usize, Vec<(Edge, f64)>)> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut lines = file.lines();
    let header = lines.next().ok_or_else(|| Error::Parse("empty snapshot file".into()))??;
    let cols = header.trim().split(',').count();
    if cols < 4 || (cols - 2) % 2 != 0 {
        return Err(Error::Parse(format!("bad snapshot header '{header}'")));
    }
    let dim = (cols - 2) / 2;
    if header.trim() != snapshot_csv_header(dim) {
        return Err(Error::Parse(format!("bad snapshot header '{header}'")));
    }
    let mut out = Vec::new();
    for (n, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("bad snapshot row {}", n + 2));
        let parts: Vec<&str> = line.trim().split(',').collect();
        if parts.len() != cols {
            return Err(bad());
        }
        let t: f64 = parts[1].parse().map_err(|_| bad())?;
        let ints: Vec<i32> = parts[2..]
            .iter()
            .map(|p| p.parse().map_err(|_| bad()))
            .collect::<Result<_>>()?;
        let e = Edge::new(Vertex::new(&ints[..dim])?, Vertex::new(&ints[dim..])?)?;
        out.push((e, t));
    }
    Ok((dim, out))
}

/// Magic bytes of the binary snapshot format.
pub const SNAPSHOT_MAGIC: &[u8; 4] = b"WFPP";
pub const SNAPSHOT_VERSION: u8 = 1;

/// Binary layout, little-endian:
/// magic `WFPP`, version `u8`, dimension `u8`, edge count `u64`, then per
/// edge the zigzag LEB128 varint deltas of the lower endpoint's coordinates
/// against the previous edge, the axis as `u8`, and the time as `f64`.
pub fn write_snapshot_binary(out: &mut impl Write, dim: usize, edges: &[(Edge, f64)]) -> Result<()> {
    out.write_all(SNAPSHOT_MAGIC)?;
    out.write_all(&[SNAPSHOT_VERSION, dim as u8])?;
    out.write_all(&(edges.len() as u64).to_le_bytes())?;
    let mut prev = [0i32; MAX_DIM];
    let mut buf = Vec::with_capacity(16);
    for (e, t) in edges {
        buf.clear();
        let a = e.endpoint_a();
        for (i, &c) in a.coords().iter().enumerate() {
            let delta = c as i64 - prev[i] as i64;
            write_varint(&mut buf, ((delta << 1) ^ (delta >> 63)) as u64);
            prev[i] = c;
        }
        buf.push(e.axis() as u8);
        buf.extend_from_slice(&t.to_le_bytes());
        out.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_snapshot_binary(input: &mut impl Read) -> Result<(usize, Vec<(Edge, f64)>)> {
    let mut head = [0u8; 14];
    input.read_exact(&mut head)?;
    if &head[..4] != SNAPSHOT_MAGIC {
        return Err(Error::Parse("not a snapshot file".into()));
    }
    if head[4] != SNAPSHOT_VERSION {
        return Err(Error::Parse(format!("unsupported snapshot version {}", head[4])));
    }
    let dim = head[5] as usize;
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::UnsupportedDimension(dim));
    }
    let count = u64::from_le_bytes(head[6..14].try_into().unwrap()) as usize;
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let mut prev = [0i64; MAX_DIM];
    let mut out = Vec::with_capacity(count.min(1 << 24));
    for _ in 0..count {
        let mut coords = [0i32; MAX_DIM];
        for i in 0..dim {
            let z = read_varint(&bytes, &mut pos)?;
            let delta = ((z >> 1) as i64) ^ -((z & 1) as i64);
            prev[i] += delta;
            coords[i] = i32::try_from(prev[i]).map_err(|_| Error::Parse("coordinate overflow".into()))?;
        }
        let tail = bytes
            .get(pos..pos + 9)
            .ok_or_else(|| Error::Parse("truncated snapshot".into()))?;
        let axis = tail[0] as usize;
        if axis >= dim {
            return Err(Error::Parse("bad axis in snapshot".into()));
        }
        let t = f64::from_le_bytes(tail[1..9].try_into().unwrap());
        pos += 9;
        out.push((Edge::from_base(Vertex::new(&coords[..dim])?, axis), t));
    }
    if pos != bytes.len() {
        return Err(Error::Parse("trailing bytes in snapshot".into()));
    }
    Ok((dim, out))
}

fn write_varint(buf: &mut Vec<u8>, mut x: u64) {
    while x >= 0x80 {
        buf.push((x as u8) | 0x80);
        x >>= 7;
    }
    buf.push(x as u8);
}

fn read_varint(bytes: &[u8], pos: &mut usize) -> Result<u64> {
    let mut x = 0u64;
    let mut shift = 0;
    loop {
        let b = *bytes
            .get(*pos)
            .ok_or_else(|| Error::Parse("truncated snapshot".into()))?;
        *pos += 1;
        if shift >= 64 {
            return Err(Error::Parse("varint overflow".into()));
        }
        x |= ((b & 0x7F) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(x);
        }
        shift += 7;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::boundary_edges;

    fn v(c: &[i32]) -> Vertex {
        Vertex::new(c).unwrap()
    }

    fn std_weight(dim: usize) -> AlphaWeightFunction {
        AlphaWeightFunction::constant(0.0, 1.0, dim).unwrap()
    }

    #[test]
    fn single_edge_run() {
        let cfg = RunConfig::new(std_weight(2), 3, StopRule::EdgeCount { n: 1 });
        let r = run_fpp(&cfg).unwrap();
        assert_eq!(r.final_state.step_count(), 1);
        assert_eq!(r.final_state.vertex_count(), 2);
        assert!(r.final_state.edge_log[0].0.contains(&v(&[0, 0])));
        assert_eq!(r.rng_draw_count, 4 + 3);
    }

    #[test]
    fn passage_times() {
        let cfg = RunConfig::new(std_weight(2), 11, StopRule::EdgeCount { n: 200 });
        let r = run_fpp(&cfg).unwrap();
        assert_eq!(passage_time(&r, &v(&[0, 0])), Some(0.0));
        assert_eq!(passage_time(&r, &v(&[1000, 0])), None);
        for (u, t) in &r.final_state.vertex_log[1..] {
            assert!(passage_time(&r, u).unwrap() > 0.0);
            assert_eq!(passage_time(&r, u), Some(*t));
        }
    }

    #[test]
    fn passage_time_is_shortest_path() {
        // Oracle: Dijkstra over the same per-edge draws on a box that contains
        // the cluster.
        let f = AlphaWeightFunction::constant(0.7, 1.0, 2).unwrap();
        let cfg = RunConfig::new(f.clone(), 5, StopRule::EdgeCount { n: 300 });
        let r = run_fpp(&cfg).unwrap();
        let half = 40;
        let idx = |x: i32, y: i32| ((x + half) * (2 * half + 1) + (y + half)) as usize;
        let n = ((2 * half + 1) * (2 * half + 1)) as usize;
        let mut dist = vec![f64::INFINITY; n];
        dist[idx(0, 0)] = 0.0;
        let mut seen = vec![false; n];
        let mut order = BinaryHeap::new();
        order.push(std::cmp::Reverse((0u64, 0i32, 0i32)));
        while let Some(std::cmp::Reverse((bits, x, y))) = order.pop() {
            let d = f64::from_bits(bits);
            if seen[idx(x, y)] {
                continue;
            }
            seen[idx(x, y)] = true;
            for_each_incident(&v(&[x, y]), |e| {
                let o = e.other(&v(&[x, y]));
                let (ox, oy) = (o.coord(0), o.coord(1));
                if ox.abs() > half || oy.abs() > half {
                    return;
                }
                let nd = d + edge_passage_draw(5, &e, f.edge_weight(&e));
                if nd < dist[idx(ox, oy)] {
                    dist[idx(ox, oy)] = nd;
                    order.push(std::cmp::Reverse((nd.to_bits(), ox, oy)));
                }
            });
        }
        for (u, t) in &r.final_state.vertex_log {
            let d = dist[idx(u.coord(0), u.coord(1))];
            assert!((d - t).abs() <= 1e-12 * d.max(1.0), "{u:?}: {d} vs {t}");
        }
    }

    #[test]
    fn clock_and_frontier_consistency() {
        let f = AlphaWeightFunction::constant(1.0, 1.0, 2).unwrap();
        let mut cfg = RunConfig::new(f, 9, StopRule::EdgeCount { n: 500 });
        cfg.snapshot_schedule = vec![Checkpoint::Step { n: 100 }, Checkpoint::Step { n: 250 }];
        let r = run_fpp(&cfg).unwrap();
        let s = &r.final_state;
        assert_eq!(s.clock, s.edge_log.iter().map(|x| x.1).fold(0.0, f64::max));
        for w in s.edge_log.windows(2) {
            assert!(w[1].1 >= w[0].1);
        }
        let boundary: Vec<Edge> = {
            let mut b: Vec<_> = boundary_edges(&s.edge_set(), &s.vertex_set()).into_iter().collect();
            b.sort();
            b
        };
        assert_eq!(boundary, s.frontier_edges());
        assert_eq!(r.snapshots.len(), 2);
        assert_eq!(r.snapshots[0].edge_count, 100);
        for (e, t) in s.frontier_times() {
            assert!(t >= s.clock, "{e:?}");
        }
    }

    #[test]
    fn determinism() {
        let f = AlphaWeightFunction::constant(0.5, 1.0, 3).unwrap();
        let cfg = RunConfig::new(f, 42, StopRule::EdgeCount { n: 2000 });
        let a = run_fpp(&cfg).unwrap();
        let b = run_fpp(&cfg).unwrap();
        assert_eq!(a.final_state.edge_log.len(), b.final_state.edge_log.len());
        for (x, y) in a.final_state.edge_log.iter().zip(&b.final_state.edge_log) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
        let ea = run_eden_chain(&cfg).unwrap();
        let eb = run_eden_chain(&cfg).unwrap();
        for (x, y) in ea.final_state.edge_log.iter().zip(&eb.final_state.edge_log) {
            assert_eq!(x.0, y.0);
            assert_eq!(x.1.to_bits(), y.1.to_bits());
        }
    }

    #[test]
    fn weight_rescaling_rescales_times() {
        let f1 = AlphaWeightFunction::constant(0.0, 1.0, 2).unwrap();
        let f3 = AlphaWeightFunction::constant(0.0, 3.0, 2).unwrap();
        let a = run_fpp(&RunConfig::new(f1, 8, StopRule::EdgeCount { n: 1000 })).unwrap();
        let b = run_fpp(&RunConfig::new(f3, 8, StopRule::EdgeCount { n: 1000 })).unwrap();
        for (x, y) in a.final_state.edge_log.iter().zip(&b.final_state.edge_log) {
            assert_eq!(x.0, y.0);
            assert!((x.1 / 3.0 - y.1).abs() <= 1e-12 * x.1.max(1e-300));
        }
    }

    #[test]
    fn stop_rules() {
        let f = std_weight(2);
        let r = run_fpp(&RunConfig::new(f.clone(), 1, StopRule::Time { t: 3.0 })).unwrap();
        assert_eq!(r.stop_time, 3.0);
        assert!(r.final_state.clock <= 3.0);
        assert!(r.final_state.frontier_times().iter().all(|x| x.1 > 3.0));

        let r = run_fpp(&RunConfig::new(f.clone(), 1, StopRule::EuclidRadius { r: 5.0 })).unwrap();
        let exit = r.exit_vertex.unwrap();
        assert!(exit.euclidean_norm() > 5.0);
        let outside = r.final_state.vertex_log.iter().filter(|(u, _)| u.euclidean_norm() > 5.0).count();
        assert_eq!(outside, 1);
        assert_eq!(r.final_state.vertex_log.last().unwrap().0, exit);

        let r = run_fpp(&RunConfig::new(
            f.clone(),
            1,
            StopRule::NormRadius { r: 4.0, norm: NormSpec::L1 },
        ))
        .unwrap();
        let e = r.exit_vertex.unwrap();
        assert!(e.coords().iter().map(|c| c.abs()).sum::<i32>() > 4);

        let r = run_fpp(&RunConfig::new(f.clone(), 1, StopRule::VertexHit { vertex: vec![3, -2] })).unwrap();
        assert_eq!(r.final_state.vertex_log.last().unwrap().0, v(&[3, -2]));

        let mut cfg = RunConfig::new(f, 1, StopRule::EdgeCount { n: 100_000 });
        cfg.vertex_cap = 50;
        assert!(matches!(run_fpp(&cfg), Err(Error::VertexCapExceeded { cap: 50 })));
        cfg.stop_rule = StopRule::EdgeCount { n: 0 };
        assert!(run_fpp(&cfg).is_err());
    }

    #[test]
    fn eden_selection_probabilities() {
        assert_eq!(normalize_weights(&[1.0, 3.0]), vec![0.25, 0.75]);
        let f = AlphaWeightFunction::constant(1.0, 1.0, 1).unwrap();
        let b = [Edge::from_base(v(&[1]), 0), Edge::from_base(v(&[-1]), 0)];
        let p = selection_probabilities(&f, &b);
        assert!((p[0] - 0.75).abs() < 1e-15 && (p[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn eden_chain_frontier_and_times() {
        let f = AlphaWeightFunction::constant(0.5, 1.0, 2).unwrap();
        let mut cfg = RunConfig::new(f, 4, StopRule::EdgeCount { n: 20_000 });
        let r = run_eden_chain(&cfg).unwrap();
        let s = &r.final_state;
        assert_eq!(s.step_count(), 20_000);
        let mut b: Vec<_> = boundary_edges(&s.edge_set(), &s.vertex_set()).into_iter().collect();
        b.sort();
        assert_eq!(b, s.frontier_edges());
        for w in s.edge_log.windows(2) {
            assert!(w[1].1 > w[0].1);
        }
        cfg.holding_times = false;
        let r = run_eden_chain(&cfg).unwrap();
        assert_eq!(r.final_state.clock, 20_000.0);
        cfg.stop_rule = StopRule::Time { t: 1.0 };
        assert!(run_eden_chain(&cfg).is_err());
    }

    #[test]
    fn fenwick_matches_linear_scan() {
        let mut fr = EdenFrontier::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut live = Vec::new();
        for i in 0..500 {
            let e = Edge::from_base(v(&[i, 0]), 0);
            let w = rng.random_range(0.1..5.0);
            fr.push(e, w);
            live.push((e, w));
            if i % 3 == 0 {
                let k = rng.random_range(0..live.len());
                let (e, _) = live.remove(k);
                fr.remove(&e);
            }
        }
        let total: f64 = live.iter().map(|x| x.1).sum();
        assert!((fr.total_exact() - total).abs() < 1e-9);
        let order: Vec<(Edge, f64)> = fr
            .edges
            .iter()
            .zip(&fr.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(e, w)| (*e, *w))
            .collect();
        for k in 0..1000 {
            let target = total * (k as f64 + 0.5) / 1000.0;
            let mut acc = 0.0;
            let expect = order
                .iter()
                .find(|(_, w)| {
                    acc += w;
                    acc > target
                })
                .unwrap()
                .0;
            assert_eq!(fr.edges[fr.find(target)], expect);
        }
    }

    #[test]
    fn tau_infinity_sequence() {
        let f = AlphaWeightFunction::constant(3.0, 1.0, 1).unwrap();
        let cfg = RunConfig::new(f, 2, StopRule::EdgeCount { n: 1 });
        let rep = tau_infinity_estimate(&cfg, &[1.5, 4.0, 16.0, 64.0]).unwrap();
        for w in rep.sigma.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let expect = 8.0 + 8.0 / 27.0;
        assert!((rep.ray_bounds[0] - expect).abs() < 1e-12);
        // Oracle: 8 (1 - 2^-3) zeta(3) = sum over k of (k + 1/2)^-3.
        let zeta3 = 1.202_056_903_159_594_2;
        assert!((rep.ray_bound_infinity - 7.0 * zeta3).abs() < 1e-9);
        let g = AlphaWeightFunction::constant(1.0, 1.0, 2).unwrap();
        assert!(tau_infinity_estimate(&RunConfig::new(g, 1, StopRule::EdgeCount { n: 1 }), &[2.0]).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let f = AlphaWeightFunction::constant(0.0, 1.0, 3).unwrap();
        let r = run_fpp(&RunConfig::new(f, 77, StopRule::EdgeCount { n: 3000 })).unwrap();
        let edges = &r.final_state.edge_log;
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        save_snapshot_csv(&p, 3, edges).unwrap();
        let (d, back) = load_snapshot_csv(&p).unwrap();
        assert_eq!(d, 3);
        assert_eq!(&back, edges);
        let mut buf = Vec::new();
        write_snapshot_binary(&mut buf, 3, edges).unwrap();
        let (d, back) = read_snapshot_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(d, 3);
        assert_eq!(&back, edges);
        assert!(buf.len() < edges.len() * 16);
        buf[0] = b'X';
        assert!(read_snapshot_binary(&mut buf.as_slice()).is_err());
    }
}
