//! Runs configured experiments: the per-round loop, stopping, detection,
//! metrics and seeded parameter sweeps.
//!
//! Round `k` of a run proceeds as: inject the compromised broadcasts into
//! `x^(k)`, pick the topology in effect (schedule lookup, then optional edge
//! thinning), draw the active set, and apply one step to obtain `x^(k+1)` and
//! `c^(k+1)`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use crate::adversary::{derive_seed, AttackContext};
use crate::baseline::trimmed_step;
use crate::config::{config_from_value, merge_json, Algorithm, DetectParams, Scheduler, SimConfig};
use crate::error::{Error, Result};
use crate::repc::{denormalize, normalize_initial, step_detailed, AffineMap, NetworkState};
use crate::topology::{validate_assumptions, AgentId, AssumptionReport};

/// Fallback round cap when no convergence-rate bound applies.
pub const DEFAULT_ROUND_CAP: u64 = 5000;
/// Consecutive calm rounds required before stopping a non-synchronous run.
pub const DEFAULT_RANDOM_SETTLE: u64 = 20;

const SCHED_LABEL: u64 = 0x5C4E_D01E;
const ATTACK_LABEL: u64 = 0xA77A_C4ED;
const SWEEP_LABEL: u64 = 0x5EE9;

/// What happened to `c_ij` in a round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RepMark {
    /// Not recomputed: `j` is not a current neighbour or `i` was idle.
    NotEvaluated,
    /// Positive reputation, or a floor caused by a negligible discrepancy.
    Positive,
    /// Took the confidence-floor branch with a material discrepancy.
    Floor,
}

/// Everything recorded about round `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundTrace {
    pub k: u64,
    /// Broadcast states `x^(k)` after injection, normalized.
    pub x: Vec<f64>,
    /// Reputations `c^(k+1)` produced by the round.
    pub c: Vec<Vec<f64>>,
    /// `marks[i][j]` for the recomputation of `c_ij` in this round.
    pub marks: Vec<Vec<RepMark>>,
    /// `‖x^(k+1) − x^(k)‖_∞` over regular agents.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The stopping threshold held for the required number of rounds.
    Converged,
    RoundCap,
}

/// Convergence-rate bound `λ = 3 / (min|N_i| + 1)` with `|N_i|` counting self.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateBound {
    pub min_neighborhood: usize,
    pub lambda: f64,
    /// `⌈log_λ δ⌉`.
    pub rounds: u64,
}

/// `⌈log_λ δ⌉` for `λ, δ ∈ (0, 1)`.
pub fn round_bound(lambda: f64, delta: f64) -> Result<u64> {
    if !(lambda > 0.0 && lambda < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg("round_bound needs lambda and delta in (0,1)"));
    }
    Ok((delta.ln() / lambda.ln()).ceil() as u64)
}

/// The rate bound for a configuration, when its assumptions hold: a
/// synchronous reputation run whose every neighbourhood has more than three members.
pub fn rate_bound(config: &SimConfig) -> Option<RateBound> {
    if config.algorithm != Algorithm::Repc || config.scheduler != Scheduler::Synchronous {
        return None;
    }
    let m = config.schedule.min_neighborhood_size();
    if m <= 3 || config.delta >= 1.0 {
        return None;
    }
    let lambda = 3.0 / (m as f64 + 1.0);
    Some(RateBound {
        min_neighborhood: m,
        lambda,
        rounds: round_bound(lambda, config.delta).ok()?,
    })
}

/// Effective round cap: the configured cap (default ten times the rate bound,
/// else [`DEFAULT_ROUND_CAP`]), never below the rate bound.
pub fn effective_round_cap(config: &SimConfig) -> u64 {
    match rate_bound(config) {
        Some(b) => config.round_cap.unwrap_or(10 * b.rounds).max(b.rounds),
        None => config.round_cap.unwrap_or(DEFAULT_ROUND_CAP),
    }
}

fn settle_rounds(config: &SimConfig) -> u64 {
    config.settle_rounds.unwrap_or(match config.scheduler {
        Scheduler::Synchronous => 1,
        _ => DEFAULT_RANDOM_SETTLE,
    })
}

/// Neighbours each agent suspects, keyed by the suspecting agent.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Detection {
    pub flags: BTreeMap<AgentId, BTreeSet<AgentId>>,
    /// Some flagged pair rests on fewer than `horizon` recomputations.
    pub low_confidence: bool,
}

/// Flags `j` at `i` when the last `horizon` recomputations of `c_ij` all took
/// the floor branch. Feeds on rounds in order.
#[derive(Debug, Clone)]
pub struct DetectionTracker {
    horizon: usize,
    /// `(consecutive floors, recomputations)` per pair.
    counts: Vec<Vec<(usize, usize)>>,
}

impl DetectionTracker {
    pub fn new(n: usize, params: &DetectParams) -> Self {
        DetectionTracker {
            horizon: params.horizon,
            counts: vec![vec![(0, 0); n]; n],
        }
    }

    pub fn observe(&mut self, marks: &[Vec<RepMark>]) {
        for (row, mrow) in self.counts.iter_mut().zip(marks) {
            for (cell, m) in row.iter_mut().zip(mrow) {
                match m {
                    RepMark::NotEvaluated => {}
                    RepMark::Positive => *cell = (0, cell.1 + 1),
                    RepMark::Floor => *cell = (cell.0 + 1, cell.1 + 1),
                }
            }
        }
    }

    pub fn detection(&self) -> Detection {
        let mut out = Detection::default();
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &(streak, seen)) in row.iter().enumerate() {
                let short = seen < self.horizon;
                let flagged = if short { seen > 0 && streak == seen } else { streak >= self.horizon };
                if flagged && i != j {
                    out.flags.entry(i).or_default().insert(j);
                    out.low_confidence |= short;
                }
            }
        }
        out
    }
}

/// Applies the flagging rule to a recorded trace.
pub fn detect_attacked(trace: &[RoundTrace], params: &DetectParams) -> Detection {
    let Some(first) = trace.first() else {
        return Detection::default();
    };
    let mut t = DetectionTracker::new(first.x.len(), params);
    for r in trace {
        t.observe(&r.marks);
    }
    t.detection()
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub config: SimConfig,
    pub map: AffineMap,
    /// Every round when `keep_trace` is set, else the last `detection.horizon`.
    pub trace: Vec<RoundTrace>,
    pub trace_complete: bool,
    /// `x^(K)` and `c^(K)` after the last executed round, normalized.
    pub final_state: NetworkState,
    pub final_raw: Vec<f64>,
    pub rounds: u64,
    pub stop: StopReason,
    pub round_cap: u64,
    pub rate: Option<RateBound>,
    pub attacked: BTreeSet<AgentId>,
    pub regular: Vec<AgentId>,
    pub detection: Detection,
    pub assumptions: Vec<(Range<u64>, AssumptionReport)>,
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }

    /// Mean of the regular agents' final raw states.
    pub fn consensus_value(&self) -> f64 {
        mean(self.regular.iter().map(|&i| self.final_raw[i]))
    }

    /// Broadcast states of every recorded round followed by the final state, raw units.
    pub fn raw_series(&self) -> Vec<(u64, Vec<f64>)> {
        let mut out: Vec<(u64, Vec<f64>)> =
            self.trace.iter().map(|r| (r.k, denormalize(&r.x, &self.map))).collect();
        out.push((self.rounds, self.final_raw.clone()));
        out
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Uniform random subset of size at least `min_active` (and at least one).
fn draw_active(n: usize, min_active: usize, rng: &mut ChaCha8Rng) -> Vec<bool> {
    let need = min_active.max(1);
    loop {
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if mask.iter().filter(|&&b| b).count() >= need {
            return mask;
        }
    }
}

/// Runs one experiment to convergence or the round cap.
pub fn run(config: &SimConfig) -> Result<RunResult> {
    config.validate()?;
    let n = config.n();
    let attacked = config.attack.attacked();
    let regular: Vec<AgentId> = (0..n).filter(|i| !attacked.contains(i)).collect();
    let assumptions = validate_assumptions(&config.schedule, &attacked);

    let mut warnings = Vec::new();
    if config.seed_defaulted {
        warnings.push("no seed given; using seed 0".to_string());
    }
    for (range, rep) in &assumptions {
        if !rep.majority_ok || !rep.regular_subgraph_connected {
            warnings.push(format!(
                "rounds {}..{}: resilience assumptions fail (min |N_i| = {}, regular subgraph strongly connected: {})",
                range.start,
                if range.end == u64::MAX { "end".to_string() } else { range.end.to_string() },
                rep.min_neighborhood_size,
                rep.regular_subgraph_connected
            ));
        }
    }

    let (x0, map) = normalize_initial(&config.x0);
    let ctx = AttackContext {
        seed: derive_seed(config.seed, &[ATTACK_LABEL]),
        map,
        initial: x0.clone(),
    };
    let mut sched_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[SCHED_LABEL]));
    let rate = rate_bound(config);
    let cap = effective_round_cap(config);
    let settle = settle_rounds(config);
    let window = config.detection.horizon;

    let mut state = NetworkState::initial(x0, config.schedule.lookup(0));
    let mut tracker = DetectionTracker::new(n, &config.detection);
    let mut trace: VecDeque<RoundTrace> = VecDeque::new();
    let mut calm = 0;
    let mut stop = StopReason::RoundCap;
    let mut held_any = BTreeSet::new();

    for k in 0..cap {
        debug_assert_eq!(state.k, k);
        config.attack.inject_into(&mut state.x, k, &ctx);
        let base = config.schedule.lookup(k);
        let thinned;
        let topo = match config.scheduler {
            Scheduler::StochasticEdges { edge_prob } => {
                thinned = base.thinned(edge_prob, &mut sched_rng);
                &thinned
            }
            _ => base,
        };
        let active = match config.scheduler {
            Scheduler::AsyncRandomSubset { min_active } => Some(draw_active(n, min_active, &mut sched_rng)),
            _ => None,
        };

        let mut marks = vec![vec![RepMark::NotEvaluated; n]; n];
        let next = match config.algorithm {
            Algorithm::Repc => {
                let (next, detail) = step_detailed(&state, topo, &config.params, active.as_deref());
                for (i, row) in detail.rows.iter().enumerate() {
                    let Some(row) = row else { continue };
                    for (p, &j) in row.neighbors.iter().enumerate() {
                        if j != i {
                            marks[i][j] = if row.floored(p) && row.deficit(p) > config.detection.tolerance {
                                RepMark::Floor
                            } else {
                                RepMark::Positive
                            };
                        }
                    }
                }
                next
            }
            Algorithm::Trimmed => {
                let (mut next, held) = trimmed_step(&state, topo, &config.trim);
                if let Some(mask) = &active {
                    for ((nx, &x), &on) in next.x.iter_mut().zip(&state.x).zip(mask) {
                        if !on {
                            *nx = x;
                        }
                    }
                }
                held_any.extend(held.into_iter().filter(|i| !attacked.contains(i)));
                next
            }
        };
        tracker.observe(&marks);

        let delta = regular.iter().map(|&i| (next.x[i] - state.x[i]).abs()).fold(0.0, f64::max);
        if !delta.is_finite() {
            return Err(Error::Runtime(format!("state became non-finite in round {k}")));
        }
        trace.push_back(RoundTrace {
            k,
            x: state.x.clone(),
            c: next.c.clone(),
            marks,
            delta,
        });
        if !config.keep_trace && trace.len() > window {
            trace.pop_front();
        }
        state = next;
        if delta < config.delta {
            calm += 1;
            if calm >= settle {
                stop = StopReason::Converged;
                break;
            }
        } else {
            calm = 0;
        }
    }

    if !held_any.is_empty() {
        warnings.push(format!(
            "agents {held_any:?} heard at most 2·f_trim neighbours in some round and held their state"
        ));
    }
    if stop == StopReason::RoundCap {
        warnings.push(format!("round cap {cap} reached before the stopping threshold held"));
    }

    let final_raw = denormalize(&state.x, &map);
    Ok(RunResult {
        config: config.clone(),
        map,
        trace_complete: config.keep_trace,
        trace: trace.into(),
        rounds: state.k,
        final_state: state,
        final_raw,
        stop,
        round_cap: cap,
        rate,
        attacked,
        regular,
        detection: tracker.detection(),
        assumptions,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    /// `|consensus under attack − reference consensus|`, raw units.
    pub consensus_error: f64,
    /// The same, divided by the initial spread.
    pub consensus_error_normalized: f64,
    /// Regular agents flagged by some regular agent.
    pub false_positives: usize,
    /// Compromised neighbours a regular agent failed to flag.
    pub false_negatives: usize,
    /// `max − min` of the regular agents' final raw states.
    pub agreement_spread: f64,
    pub converged: bool,
    /// The reference run converged, so the error is meaningful.
    pub valid: bool,
}

/// Compares an attacked run with its attack-free reference.
pub fn compute_metrics(result: &RunResult, reference: &RunResult, ground_truth: &BTreeSet<AgentId>) -> Metrics {
    let regular: Vec<AgentId> = (0..result.final_raw.len()).filter(|i| !ground_truth.contains(i)).collect();
    let value = |r: &RunResult| mean(regular.iter().map(|&i| r.final_raw[i]));
    let err = (value(result) - value(reference)).abs();
    let spread = result.map.spread();

    let last = result.rounds.saturating_sub(1);
    let topo = result.config.schedule.lookup(last);
    let empty = BTreeSet::new();
    let mut fp = 0;
    let mut fneg = 0;
    for &i in &regular {
        let flags = result.detection.flags.get(&i).unwrap_or(&empty);
        fp += flags.iter().filter(|j| !ground_truth.contains(j)).count();
        fneg += topo.proper(i).iter().filter(|j| ground_truth.contains(j) && !flags.contains(j)).count();
    }
    let lo = regular.iter().map(|&i| result.final_raw[i]).fold(f64::INFINITY, f64::min);
    let hi = regular.iter().map(|&i| result.final_raw[i]).fold(f64::NEG_INFINITY, f64::max);
    Metrics {
        consensus_error: err,
        consensus_error_normalized: if spread > 0.0 { err / spread } else { err },
        false_positives: fp,
        false_negatives: fneg,
        agreement_spread: if regular.is_empty() { 0.0 } else { hi - lo },
        converged: result.converged(),
        valid: reference.converged(),
    }
}

/// Runs `config` and its attack-free reference with the same seed.
pub fn run_with_reference(config: &SimConfig) -> Result<(RunResult, RunResult, Metrics)> {
    let attacked = run(config)?;
    let reference = run(&config.without_attack())?;
    let m = compute_metrics(&attacked, &reference, &config.attack.attacked());
    Ok((attacked, reference, m))
}

/// One modification applied to the base configuration document.
#[derive(Debug, Clone, PartialEq)]
pub enum Override {
    /// Replace the value at a JSON pointer such as `/attack/agents/0/mu`.
    Pointer(String, Value),
    /// Recursive merge of an object patch.
    Merge(Value),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridCell(pub Vec<Override>);

impl GridCell {
    pub fn apply(&self, doc: &mut Value) -> Result<()> {
        for o in &self.0 {
            match o {
                Override::Pointer(path, v) => {
                    let slot = doc
                        .pointer_mut(path)
                        .ok_or_else(|| Error::config(format!("grid path {path} does not exist in the configuration")))?;
                    *slot = v.clone();
                }
                Override::Merge(patch) => merge_json(doc, patch),
            }
        }
        Ok(())
    }

    /// JSON description used in output tables.
    pub fn label(&self) -> Value {
        let mut v = Value::Object(Default::default());
        for o in &self.0 {
            match o {
                Override::Pointer(p, x) => {
                    if let Value::Object(m) = &mut v {
                        m.insert(p.clone(), x.clone());
                    }
                }
                Override::Merge(patch) => merge_json(&mut v, patch),
            }
        }
        v
    }
}

/// Cartesian product of pointer axes, first axis varying slowest.
pub fn grid_from_axes(axes: &[(String, Vec<Value>)]) -> Vec<GridCell> {
    axes.iter().fold(vec![GridCell::default()], |cells, (path, values)| {
        cells
            .iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut c = c.clone();
                    c.0.push(Override::Pointer(path.clone(), v.clone()));
                    c
                })
            })
            .collect()
    })
}

/// Seed of repeat `rep` in cell `cell` of a sweep seeded with `seed`.
pub fn sweep_run_seed(seed: u64, cell: usize, rep: usize) -> u64 {
    derive_seed(seed, &[SWEEP_LABEL, cell as u64, rep as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub cell: usize,
    pub overrides: Value,
    pub runs: usize,
    /// Over valid runs, raw units.
    pub mean_error: f64,
    pub std_error: f64,
    pub sem: f64,
    pub max_error: f64,
    pub mean_spread: f64,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub converged: usize,
    /// Runs whose reference did not converge; excluded from the error statistics.
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub seed: u64,
    pub repeats: usize,
    pub cells: Vec<CellSummary>,
}

/// Builds the configuration of one sweep run.
pub fn sweep_config(base: &Value, cell: &GridCell, cell_index: usize, rep: usize, seed: u64) -> Result<SimConfig> {
    let mut doc = base.clone();
    cell.apply(&mut doc)?;
    let mut cfg = config_from_value(&doc)?;
    cfg.seed = sweep_run_seed(seed, cell_index, rep);
    cfg.seed_defaulted = false;
    cfg.keep_trace = false;
    Ok(cfg)
}

/// Runs every cell `repeats` times with derived seeds and aggregates. The
/// result does not depend on execution order or thread count.
pub fn sweep(base: &SimConfig, grid: &[GridCell], repeats: usize, seed: u64) -> Result<SweepTable> {
    if repeats == 0 {
        return Err(Error::arg("sweep repeats must be at least 1"));
    }
    let doc = base.to_value();
    let configs: Vec<Vec<SimConfig>> = grid
        .iter()
        .enumerate()
        .map(|(c, cell)| (0..repeats).map(|r| sweep_config(&doc, cell, c, r, seed)).collect())
        .collect::<Result<_>>()?;
    let jobs: Vec<&SimConfig> = configs.iter().flatten().collect();
    let metric = |cfg: &&SimConfig| run_with_reference(cfg).map(|(_, _, m)| m);

    #[cfg(feature = "parallel")]
    let metrics: Vec<Result<Metrics>> = {
        use rayon::prelude::*;
        jobs.par_iter().map(metric).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let metrics: Vec<Result<Metrics>> = jobs.iter().map(metric).collect();
    let metrics: Vec<Metrics> = metrics.into_iter().collect::<Result<_>>()?;

    let cells = metrics
        .chunks(repeats)
        .zip(grid)
        .enumerate()
        .map(|(c, (ms, cell))| summarize(c, cell.label(), ms))
        .collect();
    Ok(SweepTable { seed, repeats, cells })
}

fn summarize(cell: usize, overrides: Value, ms: &[Metrics]) -> CellSummary {
    let errors: Vec<f64> = ms.iter().filter(|m| m.valid).map(|m| m.consensus_error).collect();
    let n = errors.len();
    let mean_error = mean(errors.iter().copied());
    let var = if n > 1 {
        errors.iter().map(|e| (e - mean_error).powi(2)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    CellSummary {
        cell,
        overrides,
        runs: ms.len(),
        mean_error,
        std_error: var.sqrt(),
        sem: if n > 0 { (var / n as f64).sqrt() } else { f64::NAN },
        max_error: errors.iter().copied().fold(f64::NAN, f64::max),
        mean_spread: mean(ms.iter().map(|m| m.agreement_spread)),
        false_positives: ms.iter().map(|m| m.false_positives).sum(),
        false_negatives: ms.iter().map(|m| m.false_negatives).sum(),
        converged: ms.iter().filter(|m| m.converged).count(),
        invalid: ms.len() - n,
    }
}
