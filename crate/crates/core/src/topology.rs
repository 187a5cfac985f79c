//! Directed communication graphs.
//!
//! An edge `(u, v)` means **v reads u**: agent `v` directly accesses the state
//! of agent `u`, so `u` is an in-neighbour of `v`. The closed neighbourhood of
//! `v` is `N_v = {v} ∪ {u : (u, v) ∈ E}`. Self-membership is implicit and never
//! stored as an edge.

use std::collections::BTreeSet;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GraphDoc", into = "GraphDoc")]
pub struct Topology {
    n: usize,
    /// Sorted proper in-neighbours of every node.
    proper: Vec<Vec<AgentId>>,
    /// Sorted closed neighbourhoods (`proper` plus the node itself).
    closed: Vec<Vec<AgentId>>,
}

/// On-disk form: `{"n": int, "edges": [[u, v], ...]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphDoc {
    pub n: usize,
    pub edges: Vec<[usize; 2]>,
}

impl TryFrom<GraphDoc> for Topology {
    type Error = Error;

    fn try_from(doc: GraphDoc) -> Result<Self> {
        Topology::new(doc.n, doc.edges.iter().map(|e| (e[0], e[1])))
    }
}

impl From<Topology> for GraphDoc {
    fn from(t: Topology) -> Self {
        GraphDoc {
            n: t.n,
            edges: t.edges().map(|(u, v)| [u, v]).collect(),
        }
    }
}

impl Topology {
    /// Builds a graph from `(u, v)` pairs. Duplicate edges collapse; self-loops
    /// and out-of-range ids are rejected.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (AgentId, AgentId)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::arg("a topology needs at least one agent"));
        }
        let mut sets = vec![BTreeSet::new(); n];
        for (u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::arg(format!("edge ({u}, {v}) references an agent outside 0..{n}")));
            }
            if u == v {
                return Err(Error::arg(format!("self-loop ({u}, {u}) is not allowed; self-access is implicit")));
            }
            sets[v].insert(u);
        }
        Ok(Self::from_sets(sets))
    }

    fn from_sets(sets: Vec<BTreeSet<AgentId>>) -> Self {
        let proper: Vec<Vec<AgentId>> = sets.into_iter().map(|s| s.into_iter().collect()).collect();
        let closed = proper
            .iter()
            .enumerate()
            .map(|(v, p)| {
                let mut c = p.clone();
                let pos = c.partition_point(|&u| u < v);
                c.insert(pos, v);
                c
            })
            .collect();
        Topology { n: proper.len(), proper, closed }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `N_v`, ascending, always containing `v`.
    pub fn neighbors(&self, v: AgentId) -> Result<&[AgentId]> {
        self.closed
            .get(v)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::arg(format!("agent {v} out of range 0..{}", self.n)))
    }

    /// `N̄_v = N_v \ {v}`, ascending.
    pub fn proper_neighbors(&self, v: AgentId) -> Result<&[AgentId]> {
        self.proper
            .get(v)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::arg(format!("agent {v} out of range 0..{}", self.n)))
    }

    pub(crate) fn proper(&self, v: AgentId) -> &[AgentId] {
        &self.proper[v]
    }

    pub(crate) fn closed(&self, v: AgentId) -> &[AgentId] {
        &self.closed[v]
    }

    pub fn in_degree(&self, v: AgentId) -> usize {
        self.proper[v].len()
    }

    pub fn has_edge(&self, u: AgentId, v: AgentId) -> bool {
        v < self.n && self.proper[v].binary_search(&u).is_ok()
    }

    /// All edges `(u, v)` in ascending `(v, u)` order.
    pub fn edges(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        self.proper
            .iter()
            .enumerate()
            .flat_map(|(v, p)| p.iter().map(move |&u| (u, v)))
    }

    pub fn edge_count(&self) -> usize {
        self.proper.iter().map(Vec::len).sum()
    }

    /// Smallest closed neighbourhood size over all agents.
    pub fn min_neighborhood_size(&self) -> usize {
        self.closed.iter().map(Vec::len).min().unwrap_or(0)
    }

    /// Keeps every edge independently with probability `keep_prob`.
    pub fn thinned<R: Rng + ?Sized>(&self, keep_prob: f64, rng: &mut R) -> Topology {
        let sets = self
            .proper
            .iter()
            .map(|p| p.iter().copied().filter(|_| rng.random::<f64>() < keep_prob).collect())
            .collect();
        Self::from_sets(sets)
    }

    /// Relabels node `v` as `perm[v]`.
    pub fn relabeled(&self, perm: &[AgentId]) -> Result<Topology> {
        if perm.len() != self.n {
            return Err(Error::arg("permutation length must equal n"));
        }
        Topology::new(self.n, self.edges().map(|(u, v)| (perm[u], perm[v])))
    }

    /// Strong connectivity of the subgraph induced by nodes not in `removed`
    /// (edges with both endpoints kept). An empty remainder counts as connected.
    pub fn is_strongly_connected_without(&self, removed: &BTreeSet<AgentId>) -> bool {
        let kept: Vec<AgentId> = (0..self.n).filter(|v| !removed.contains(v)).collect();
        let Some(&root) = kept.first() else {
            return true;
        };
        let mut out = vec![Vec::new(); self.n];
        for (u, v) in self.edges() {
            if !removed.contains(&u) && !removed.contains(&v) {
                out[u].push(v);
            }
        }
        let mut inn = vec![Vec::new(); self.n];
        for (u, outs) in out.iter().enumerate() {
            for &v in outs {
                inn[v].push(u);
            }
        }
        let reach = |adj: &[Vec<AgentId>]| {
            let mut seen = vec![false; self.n];
            let mut stack = vec![root];
            seen[root] = true;
            while let Some(u) = stack.pop() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
            kept.iter().all(|&v| seen[v])
        };
        reach(&out) && reach(&inn)
    }
}

/// Complete digraph on `n` nodes.
pub fn make_complete(n: usize) -> Result<Topology> {
    if n < 2 {
        return Err(Error::arg("a complete graph needs n >= 2"));
    }
    Topology::new(n, (0..n).flat_map(|u| (0..n).filter(move |&v| v != u).map(move |v| (u, v))))
}

/// Each node reads the nodes `v - o (mod n)` for every offset `o`.
pub fn make_circulant(n: usize, offsets: &[usize]) -> Result<Topology> {
    if n < 2 {
        return Err(Error::arg("a circulant graph needs n >= 2"));
    }
    let mut edges = Vec::new();
    for v in 0..n {
        for &o in offsets {
            if o % n == 0 {
                return Err(Error::arg(format!("offset {o} is a multiple of n={n}")));
            }
            edges.push(((v + n - o % n) % n, v));
        }
    }
    Topology::new(n, edges)
}

/// A random directed Hamiltonian cycle plus independent Bernoulli(`extra_edge_prob`)
/// edges on every other ordered pair. Deterministic in `seed`.
pub fn make_random_strongly_connected(n: usize, extra_edge_prob: f64, seed: u64) -> Result<Topology> {
    if n < 2 {
        return Err(Error::arg("a random strongly connected graph needs n >= 2"));
    }
    if !(0.0..=1.0).contains(&extra_edge_prob) {
        return Err(Error::arg("extra_edge_prob must lie in [0, 1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<AgentId> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges: BTreeSet<(AgentId, AgentId)> =
        (0..n).map(|i| (order[i], order[(i + 1) % n])).collect();
    for u in 0..n {
        for v in 0..n {
            if u != v && !edges.contains(&(u, v)) && rng.random::<f64>() < extra_edge_prob {
                edges.insert((u, v));
            }
        }
    }
    Topology::new(n, edges)
}

/// Piecewise-constant sequence of topologies over rounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleDoc", into = "ScheduleDoc")]
pub struct TopologySchedule {
    pieces: Vec<(u64, Topology)>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleDoc {
    pub pieces: Vec<PieceDoc>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PieceDoc {
    pub from: u64,
    pub graph: Topology,
}

impl TryFrom<ScheduleDoc> for TopologySchedule {
    type Error = Error;

    fn try_from(doc: ScheduleDoc) -> Result<Self> {
        TopologySchedule::new(doc.pieces.into_iter().map(|p| (p.from, p.graph)).collect())
    }
}

impl From<TopologySchedule> for ScheduleDoc {
    fn from(s: TopologySchedule) -> Self {
        ScheduleDoc {
            pieces: s.pieces.into_iter().map(|(from, graph)| PieceDoc { from, graph }).collect(),
        }
    }
}

impl From<Topology> for TopologySchedule {
    fn from(t: Topology) -> Self {
        TopologySchedule { pieces: vec![(0, t)] }
    }
}

impl TopologySchedule {
    pub fn new(pieces: Vec<(u64, Topology)>) -> Result<Self> {
        let Some((first, topo)) = pieces.first() else {
            return Err(Error::arg("a schedule needs at least one piece"));
        };
        if *first != 0 {
            return Err(Error::arg("the first schedule piece must start at round 0"));
        }
        let n = topo.n();
        for w in pieces.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::arg("schedule piece start rounds must strictly increase"));
            }
        }
        if pieces.iter().any(|(_, t)| t.n() != n) {
            return Err(Error::arg("all schedule pieces must have the same agent count"));
        }
        Ok(TopologySchedule { pieces })
    }

    pub fn n(&self) -> usize {
        self.pieces[0].1.n()
    }

    pub fn pieces(&self) -> &[(u64, Topology)] {
        &self.pieces
    }

    /// Topology of the last piece starting at or before `k`.
    pub fn lookup(&self, k: u64) -> &Topology {
        let idx = self.pieces.partition_point(|(from, _)| *from <= k);
        &self.pieces[idx - 1].1
    }

    /// Round range covered by piece `i`; the last piece is open-ended.
    pub fn piece_range(&self, i: usize) -> Range<u64> {
        let start = self.pieces[i].0;
        let end = self.pieces.get(i + 1).map_or(u64::MAX, |p| p.0);
        start..end
    }

    pub fn min_neighborhood_size(&self) -> usize {
        self.pieces.iter().map(|(_, t)| t.min_neighborhood_size()).min().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// Minimum `|N_i|` (self included) over regular agents.
    pub min_neighborhood_size: usize,
    /// Minimum `|N̄_i|` over regular agents.
    pub min_proper_neighbors: usize,
    /// `|N_v ∩ A| < |N_v| / 2` for every regular `v`.
    pub majority_ok: bool,
    pub regular_subgraph_connected: bool,
    /// `min |N_i| > 3`.
    pub rate_bound_applicable: bool,
}

/// Checks the structural assumptions piece by piece. Advisory only.
pub fn validate_assumptions(
    schedule: &TopologySchedule,
    attacked: &BTreeSet<AgentId>,
) -> Vec<(Range<u64>, AssumptionReport)> {
    schedule
        .pieces()
        .iter()
        .enumerate()
        .map(|(idx, (_, topo))| {
            let regular: Vec<AgentId> = (0..topo.n()).filter(|v| !attacked.contains(v)).collect();
            let min_n = regular.iter().map(|&v| topo.closed(v).len()).min().unwrap_or(0);
            let majority_ok = regular.iter().all(|&v| {
                let nv = topo.closed(v);
                let bad = nv.iter().filter(|u| attacked.contains(u)).count();
                2 * bad < nv.len()
            });
            let report = AssumptionReport {
                min_neighborhood_size: min_n,
                min_proper_neighbors: min_n.saturating_sub(1),
                majority_ok,
                regular_subgraph_connected: topo.is_strongly_connected_without(attacked),
                rate_bound_applicable: min_n > 3,
            };
            (schedule.piece_range(idx), report)
        })
        .collect()
}
