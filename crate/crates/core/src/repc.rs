//! The reputation-based consensus update.
//!
//! Each round an agent `i` with closed neighbourhood `N_i`:
//!
//! 1. scores every `j ∈ N_i` by its mean absolute discrepancy against the
//!    other states it hears (raw reputation `c̃_ij`),
//! 2. rescales the proper-neighbour scores affinely so the best one maps to 1
//!    and the `fmin` anchor maps to 0 (normalized reputation),
//! 3. replaces non-positive scores by the confidence floor `ε^{k+1}`,
//! 4. moves to the reputation-weighted average of its neighbours' states.
//!
//! States live in the normalized domain `[0, 1]`; see [`AffineMap`].
//!
//! Round-counter convention: a step applied to a state with round index `k`
//! reads `x^(k)` and produces `c^(k+1)` and `x^(k+1)`, so the floor used in that
//! step is `ε^{k+1}`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{AgentId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RepcParams {
    /// Confidence factor `ε ∈ (0, 1)`.
    pub epsilon: f64,
    /// Order of the `fmin` anchor; also the assumed attacker budget.
    pub f: usize,
    /// Sum discrepancies over `N_i` (self included) instead of `N̄_i`.
    pub include_self_in_discrepancy: bool,
    /// Weight the state update with the reputations computed in the same step.
    pub fresh_reputation_in_update: bool,
    /// Give the agent's own state weight 1 in the state update.
    pub self_weight_in_update: bool,
}

impl Default for RepcParams {
    fn default() -> Self {
        RepcParams {
            epsilon: 0.1,
            f: 1,
            include_self_in_discrepancy: true,
            fresh_reputation_in_update: true,
            self_weight_in_update: false,
        }
    }
}

impl RepcParams {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            errs.push("epsilon must lie in (0,1)".to_string());
        }
        if self.f < 1 {
            errs.push("f must be at least 1".to_string());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    /// `ε^{k+1}`, saturated at the smallest positive normal double so the
    /// floor never reaches zero on long runs.
    pub fn confidence_floor(&self, k: u64) -> f64 {
        let exp = i32::try_from(k.saturating_add(1)).unwrap_or(i32::MAX);
        self.epsilon.powi(exp).max(f64::MIN_POSITIVE)
    }
}

/// The `f`-th smallest distinct value, never the maximum unless all values
/// coincide.
pub fn fmin(values: &[f64], f: usize) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::arg("fmin of an empty list"));
    }
    if f == 0 {
        return Err(Error::arg("fmin order must be at least 1"));
    }
    let mut distinct = values.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    Ok(fmin_sorted_distinct(&distinct, f))
}

fn fmin_sorted_distinct(distinct: &[f64], f: usize) -> f64 {
    if distinct.len() == 1 {
        return distinct[0];
    }
    distinct[(f - 1).min(distinct.len() - 2)]
}

/// Counts elementary operations performed by the per-agent update: one unit per
/// absolute-difference term, comparison, or per-neighbour arithmetic step.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct OpCount(pub u64);

impl OpCount {
    fn add(&mut self, n: usize) {
        self.0 += n as u64;
    }
}

/// One agent's reputation computation for a single step. All vectors are
/// aligned with `neighbors`, the effective closed neighbourhood.
#[derive(Debug, Clone, PartialEq)]
pub struct ReputationRow {
    pub owner: AgentId,
    pub neighbors: Vec<AgentId>,
    /// `c̃`: at most 1.
    pub raw: Vec<f64>,
    /// `c̃̃`: 1 at the owner, may be negative elsewhere.
    pub normalized: Vec<f64>,
    /// Final `c`: in `(0, 1]`, 1 at the owner.
    pub confident: Vec<f64>,
}

impl ReputationRow {
    pub fn get(&self, j: AgentId) -> Option<f64> {
        self.index_of(j).map(|p| self.confident[p])
    }

    pub fn index_of(&self, j: AgentId) -> Option<usize> {
        self.neighbors.binary_search(&j).ok()
    }

    /// Whether neighbour at position `p` took the confidence-floor branch.
    pub fn floored(&self, p: usize) -> bool {
        self.neighbors[p] != self.owner && self.normalized[p] <= 0.0
    }

    /// How far neighbour `p`'s raw reputation trails the best proper neighbour's.
    pub fn deficit(&self, p: usize) -> f64 {
        let best = self
            .neighbors
            .iter()
            .zip(&self.raw)
            .filter(|(&j, _)| j != self.owner)
            .map(|(_, &r)| r)
            .fold(f64::NEG_INFINITY, f64::max);
        best - self.raw[p]
    }
}

/// Raw reputation `c̃_ij` for every `j` in the closed neighbourhood `hood`
/// (which must contain `i`): `1 − Σ_v |x_j − x_v| / |N_i|`, the sum ranging over
/// the proper neighbours, or over all of `hood` when
/// `include_self_in_discrepancy` is set.
pub fn raw_reputation(i: AgentId, x: &[f64], hood: &[AgentId], params: &RepcParams) -> Vec<f64> {
    raw_counted(i, x, hood, params, &mut OpCount::default())
}

fn raw_counted(i: AgentId, x: &[f64], hood: &[AgentId], params: &RepcParams, ops: &mut OpCount) -> Vec<f64> {
    let size = hood.len() as f64;
    // Summing in value order keeps the result independent of agent labels, so
    // ties between discrepancy sums break the same way under any relabeling.
    let mut pool: Vec<f64> = hood
        .iter()
        .filter(|&&v| params.include_self_in_discrepancy || v != i)
        .map(|&v| x[v])
        .collect();
    ops.add(sort_counted(&mut pool, |a, b| a.total_cmp(b)));
    ops.add(hood.len() * pool.len());
    hood.iter()
        .map(|&j| {
            let spread: f64 = pool.iter().map(|&xv| (x[j] - xv).abs()).sum();
            1.0 - spread / size
        })
        .collect()
}

/// Sorts `v` and returns the number of comparisons made.
fn sort_counted<T>(v: &mut [T], mut cmp: impl FnMut(&T, &T) -> Ordering) -> usize {
    let mut comparisons = 0;
    v.sort_by(|a, b| {
        comparisons += 1;
        cmp(a, b)
    });
    comparisons
}

/// Affine rescale of the proper-neighbour raw values into
/// `(c̃ − fmin) / (max − fmin)`; the owner gets 1. When `max == fmin` every
/// proper neighbour gets 1.
pub fn normalize_reputation(i: AgentId, hood: &[AgentId], raw: &[f64], params: &RepcParams) -> Vec<f64> {
    normalize_counted(i, hood, raw, params, &mut OpCount::default())
}

fn normalize_counted(
    i: AgentId,
    hood: &[AgentId],
    raw: &[f64],
    params: &RepcParams,
    ops: &mut OpCount,
) -> Vec<f64> {
    let mut proper: Vec<f64> = hood
        .iter()
        .zip(raw)
        .filter(|(&j, _)| j != i)
        .map(|(_, &r)| r)
        .collect();
    if proper.is_empty() {
        return hood.iter().map(|_| 1.0).collect();
    }
    let comparisons = sort_counted(&mut proper, |a, b| a.total_cmp(b));
    proper.dedup();
    ops.add(comparisons + proper.len());
    let anchor = fmin_sorted_distinct(&proper, params.f);
    let top = proper[proper.len() - 1];
    let span = top - anchor;
    ops.add(hood.len());
    hood.iter()
        .zip(raw)
        .map(|(&j, &r)| {
            if j == i || span == 0.0 {
                1.0
            } else {
                (r - anchor) / span
            }
        })
        .collect()
}

/// Keeps positive normalized values and floors the rest at `ε^{k+1}`.
pub fn apply_confidence(normalized: &[f64], k: u64, params: &RepcParams) -> Vec<f64> {
    let floor = params.confidence_floor(k);
    normalized.iter().map(|&v| if v > 0.0 { v } else { floor }).collect()
}

/// Reputation-weighted average over `hood`. The owner's own state enters with
/// weight `weights[owner]` only when `include_self` is set. With no proper
/// neighbours the state is returned unchanged.
pub fn state_update(i: AgentId, x: &[f64], hood: &[AgentId], weights: &[f64], include_self: bool) -> f64 {
    state_update_counted(i, x, hood, weights, include_self, &mut OpCount::default())
}

fn state_update_counted(
    i: AgentId,
    x: &[f64],
    hood: &[AgentId],
    weights: &[f64],
    include_self: bool,
    ops: &mut OpCount,
) -> f64 {
    if hood.len() <= 1 {
        return x[i];
    }
    // Value order again, so the sums do not depend on agent labels.
    let mut terms: Vec<(f64, f64)> = hood
        .iter()
        .zip(weights)
        .filter(|(&j, _)| include_self || j != i)
        .map(|(&j, &w)| (x[j], w))
        .collect();
    ops.add(sort_counted(&mut terms, |a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))));
    ops.add(terms.len());
    let (num, den) = terms.iter().fold((0.0, 0.0), |(num, den), &(xj, w)| (num + w * xj, den + w));
    assert!(den > 0.0, "reputation weights of agent {i} sum to zero");
    num / den
}

/// Full row computation for agent `i` on the effective neighbourhood `hood`.
pub fn reputation_row(i: AgentId, x: &[f64], hood: &[AgentId], k: u64, params: &RepcParams) -> ReputationRow {
    row_counted(i, x, hood, k, params, &mut OpCount::default())
}

fn row_counted(
    i: AgentId,
    x: &[f64],
    hood: &[AgentId],
    k: u64,
    params: &RepcParams,
    ops: &mut OpCount,
) -> ReputationRow {
    let raw = raw_counted(i, x, hood, params, ops);
    let normalized = normalize_counted(i, hood, &raw, params, ops);
    let confident = apply_confidence(&normalized, k, params);
    ops.add(hood.len());
    ReputationRow {
        owner: i,
        neighbors: hood.to_vec(),
        raw,
        normalized,
        confident,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkState {
    pub k: u64,
    pub x: Vec<f64>,
    /// `c[i][j]`: reputation agent `i` assigns to `j`.
    pub c: Vec<Vec<f64>>,
}

impl NetworkState {
    /// `c^(0)`: 1 on every closed neighbourhood, 0 elsewhere.
    pub fn initial(x: Vec<f64>, topo: &Topology) -> Self {
        let n = x.len();
        let mut c = vec![vec![0.0; n]; n];
        for (i, row) in c.iter_mut().enumerate() {
            for &j in topo.closed(i) {
                row[j] = 1.0;
            }
        }
        NetworkState { k: 0, x, c }
    }

    pub fn n(&self) -> usize {
        self.x.len()
    }

    /// Checks the reputation-matrix invariants for a static topology.
    pub fn check_reputation_invariants(&self, topo: &Topology) -> std::result::Result<(), String> {
        for i in 0..self.n() {
            if self.c[i][i] != 1.0 {
                return Err(format!("c[{i}][{i}] = {} != 1", self.c[i][i]));
            }
            for j in 0..self.n() {
                let v = self.c[i][j];
                if topo.has_edge(j, i) {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(format!("c[{i}][{j}] = {v} outside (0, 1]"));
                    }
                } else if i != j && v != 0.0 {
                    return Err(format!("c[{i}][{j}] = {v} for a non-neighbour"));
                }
            }
        }
        Ok(())
    }
}

/// Per-agent diagnostics of one step. `rows[i]` is `None` when agent `i` did
/// not recompute its reputations this round.
#[derive(Debug, Clone, Default)]
pub struct StepDetail {
    pub rows: Vec<Option<ReputationRow>>,
    pub ops: Vec<OpCount>,
}

/// Synchronous step: every agent recomputes reputations from `x^(k)` and updates.
pub fn sync_step(state: &NetworkState, topo: &Topology, params: &RepcParams) -> NetworkState {
    step_detailed(state, topo, params, None).0
}

/// Asynchronous step: only agents in `active` update, hearing only active
/// proper neighbours. Inactive agents keep their state and reputation row.
pub fn async_step(
    state: &NetworkState,
    topo: &Topology,
    active: &[AgentId],
    params: &RepcParams,
) -> Result<NetworkState> {
    let mask = active_mask(state.n(), active)?;
    Ok(step_detailed(state, topo, params, Some(&mask)).0)
}

pub(crate) fn active_mask(n: usize, active: &[AgentId]) -> Result<Vec<bool>> {
    if active.is_empty() {
        return Err(Error::arg("the active set must be nonempty"));
    }
    let mut mask = vec![false; n];
    for &a in active {
        if a >= n {
            return Err(Error::arg(format!("active agent {a} out of range 0..{n}")));
        }
        mask[a] = true;
    }
    Ok(mask)
}

/// Shared step kernel. `active == None` is the synchronous case.
pub fn step_detailed(
    state: &NetworkState,
    topo: &Topology,
    params: &RepcParams,
    active: Option<&[bool]>,
) -> (NetworkState, StepDetail) {
    let n = state.n();
    let k = state.k;
    let mut next = NetworkState {
        k: k + 1,
        x: state.x.clone(),
        c: state.c.clone(),
    };
    let mut detail = StepDetail {
        rows: vec![None; n],
        ops: vec![OpCount::default(); n],
    };
    let is_active = |a: AgentId| active.is_none_or(|m| m[a]);

    for i in 0..n {
        if !is_active(i) {
            continue;
        }
        let hood: Vec<AgentId> = topo.closed(i).iter().copied().filter(|&j| j == i || is_active(j)).collect();
        if hood.len() == 1 {
            continue;
        }
        let ops = &mut detail.ops[i];
        let row = row_counted(i, &state.x, &hood, k, params, ops);
        let weights: Vec<f64> = if params.fresh_reputation_in_update {
            row.confident.clone()
        } else {
            hood.iter()
                .map(|&j| match state.c[i][j] {
                    // A neighbour heard for the first time starts from c^(0) = 1.
                    w if w > 0.0 => w,
                    _ => 1.0,
                })
                .collect()
        };
        next.x[i] = state_update_counted(i, &state.x, &hood, &weights, params.self_weight_in_update, ops);
        for (&j, &c) in hood.iter().zip(&row.confident) {
            next.c[i][j] = c;
        }
        detail.rows[i] = Some(row);
    }
    (next, detail)
}

/// Record of the affine map onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineMap {
    pub min: f64,
    pub max: f64,
    /// `max == min`: every state maps to 0.
    pub degenerate: bool,
}

impl AffineMap {
    pub fn normalize(&self, v: f64) -> f64 {
        if self.degenerate {
            0.0
        } else {
            (v - self.min) / (self.max - self.min)
        }
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        self.min + v * (self.max - self.min)
    }

    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

/// Maps the raw initial states onto `[0, 1]` via `(x − min) / (max − min)`.
pub fn normalize_initial(x0: &[f64]) -> (Vec<f64>, AffineMap) {
    let min = x0.iter().copied().fold(f64::INFINITY, f64::min);
    let max = x0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let map = AffineMap {
        min,
        max,
        degenerate: max.partial_cmp(&min) != Some(Ordering::Greater),
    };
    (x0.iter().map(|&v| map.normalize(v)).collect(), map)
}

pub fn denormalize(x: &[f64], map: &AffineMap) -> Vec<f64> {
    x.iter().map(|&v| map.denormalize(v)).collect()
}
