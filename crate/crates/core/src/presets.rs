//! Named scenarios and the artifact writer shared by the command line and tests.
//!
//! Several scenarios need graphs that are only pictured, never listed. They use
//! stand-ins that satisfy the same resilience assumptions:
//!
//! * the 10-agent two-attacker graph is the circulant reading the five
//!   predecessors of each agent (`|N_i| = 6`);
//! * the dynamic pair is a circulant reading predecessors at offsets 1..=5 for
//!   rounds `k ≤ 10`, then offsets {1, 2, 3, 7}: aperiodic, and no agent reads
//!   both compromised agents of the noisy variant;
//! * the stochastic-communication graph is a seeded random strongly connected
//!   graph on five agents, every agent hearing at least three others;
//! * the stubborn-attacker comparison graph is the 5-agent circulant reading
//!   offsets {1, 2, 3}.
//!
//! All agent ids are zero-based, so the first agent is agent 0.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use crate::adversary::{AgentAttack, AttackSpec, Strategy, Units};
use crate::config::{Algorithm, Scheduler, SimConfig};
use crate::error::{Error, Result};
use crate::harness::{grid_from_axes, run, run_with_reference, sweep, Metrics, RunResult, SweepTable};
use crate::plot::{heatmap_svg, reputations_svg, states_svg};
use crate::topology::{make_circulant, make_complete, make_random_strongly_connected, TopologySchedule};
use crate::trace::{emit_trace, summary_json, sweep_csv};

pub const PRESET_NAMES: [&str; 11] = [
    "no_attack",
    "near_consensus_attacker",
    "two_attackers_same_side",
    "two_attackers_opposite",
    "async",
    "dynamic",
    "dynamic_noisy",
    "stochastic",
    "vs_baseline_k4",
    "vs_baseline_stubborn",
    "error_sweep",
];

/// Seed used when the caller does not supply one.
pub const DEFAULT_PRESET_SEED: u64 = 1;

/// Initial states of the 5-agent scenarios.
pub const X0_K5: [f64; 5] = [1.0, 0.0, 3.0, 1.2, 2.5];
const X0_10: [f64; 10] = [0.8, 2.0, 3.5, 1.0, 4.2, 2.7, 0.5, 3.0, 1.8, 2.2];
/// Initial states of the 4-agent baseline comparison.
pub const X0_K4: [f64; 4] = [2.5, 0.0, 3.0, 1.0];

#[derive(Debug, Clone, Default)]
pub struct PresetOptions {
    pub seed: Option<u64>,
    /// Run the full 201 × 181 error grid instead of the 5 × 3 desk grid.
    pub full_grid: bool,
}

#[derive(Debug, Clone)]
pub enum PresetPlan {
    Single(SimConfig),
    /// The same scenario under the reputation protocol and the trimmed baseline.
    Compare { repc: SimConfig, trimmed: SimConfig },
    Sweep {
        base: SimConfig,
        axes: Vec<(String, Vec<Value>)>,
        repeats: usize,
    },
}

#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub description: &'static str,
    pub seed: u64,
    pub plan: PresetPlan,
    pub warnings: Vec<String>,
}

fn constant(agent: usize, value: f64) -> AgentAttack {
    AgentAttack { agent, strategy: Strategy::Constant { value } }
}

fn raw_attack(agents: Vec<AgentAttack>) -> AttackSpec {
    AttackSpec { agents, units: Units::Raw, ..Default::default() }
}

fn named(mut c: SimConfig, name: &str, seed: u64) -> SimConfig {
    c.name = Some(name.to_string());
    c.seed = seed;
    c
}

fn k5() -> SimConfig {
    SimConfig::new(make_complete(5).expect("K5"), X0_K5.to_vec())
}

fn ring10() -> SimConfig {
    let mut c = SimConfig::new(make_circulant(10, &[1, 2, 3, 4, 5]).expect("circulant"), X0_10.to_vec());
    c.params.f = 2;
    c
}

fn dynamic_schedule() -> TopologySchedule {
    TopologySchedule::new(vec![
        (0, make_circulant(10, &[1, 2, 3, 4, 5]).expect("circulant")),
        (11, make_circulant(10, &[1, 2, 3, 7]).expect("circulant")),
    ])
    .expect("schedule")
}

/// Builds the named scenario.
pub fn preset(name: &str, opts: &PresetOptions) -> Result<Preset> {
    let seed = opts.seed.unwrap_or(DEFAULT_PRESET_SEED);
    let mut warnings = Vec::new();
    let (description, plan) = match name {
        "no_attack" => ("complete 5-agent network without attacks", PresetPlan::Single(named(k5(), name, seed))),
        "near_consensus_attacker" => (
            "agent 0 broadcasts 1.6, close to the attack-free consensus",
            PresetPlan::Single(named(k5().with_attack(raw_attack(vec![constant(0, 1.6)])), name, seed)),
        ),
        "two_attackers_same_side" => (
            "agents 0 and 7 broadcast distinct values below the consensus",
            PresetPlan::Single(named(ring10().with_attack(raw_attack(vec![constant(0, 0.6), constant(7, 1.2)])), name, seed)),
        ),
        "two_attackers_opposite" => (
            "agent 0 broadcasts above the consensus and agent 7 below it",
            PresetPlan::Single(named(ring10().with_attack(raw_attack(vec![constant(0, 4.0), constant(7, 0.6)])), name, seed)),
        ),
        "async" => {
            let mut c = k5().with_attack(raw_attack(vec![constant(0, 2.8)]));
            c.scheduler = Scheduler::AsyncRandomSubset { min_active: 3 };
            ("complete 5-agent network, random active subsets each round, agent 0 constant", PresetPlan::Single(named(c, name, seed)))
        }
        "dynamic" => {
            let mut c = SimConfig::new(dynamic_schedule(), X0_10.to_vec()).with_attack(raw_attack(vec![constant(0, 4.0)]));
            c.params.f = 1;
            ("10 agents, topology switches after round 10, agent 0 constant", PresetPlan::Single(named(c, name, seed)))
        }
        "dynamic_noisy" => {
            let mut c = SimConfig::new(dynamic_schedule(), X0_10.to_vec()).with_attack(raw_attack(vec![
                AgentAttack { agent: 0, strategy: Strategy::Uniform { mean: 3.5, half_width: 0.5 } },
                constant(7, 0.6),
            ]));
            c.params.f = 2;
            ("switching topology, agent 0 noisy around 3.5, agent 7 constant", PresetPlan::Single(named(c, name, seed)))
        }
        "stochastic" => {
            let g = make_random_strongly_connected(5, 0.8, 11)?;
            let mut c = SimConfig::new(g, X0_K5.to_vec()).with_attack(raw_attack(vec![constant(0, 0.2)]));
            c.scheduler = Scheduler::StochasticEdges { edge_prob: 0.8 };
            ("random 5-agent graph, each edge delivered with probability 0.8, agent 0 constant", PresetPlan::Single(named(c, name, seed)))
        }
        "vs_baseline_k4" => {
            let c = SimConfig::new(make_complete(4).expect("K4"), X0_K4.to_vec()).with_attack(raw_attack(vec![constant(0, 1.0)]));
            let mut trimmed = named(c.clone(), &format!("{name}_trimmed"), seed);
            trimmed.algorithm = Algorithm::Trimmed;
            (
                "complete 4-agent network, stubborn agent 0 inside the regular hull, both algorithms",
                PresetPlan::Compare { repc: named(c, &format!("{name}_repc"), seed), trimmed },
            )
        }
        "vs_baseline_stubborn" => {
            let g = make_circulant(5, &[1, 2, 3]).expect("circulant");
            let honest = SimConfig::new(g.clone(), X0_K5.to_vec());
            let truth = run(&honest)?.consensus_value();
            let c = SimConfig::new(g, X0_K5.to_vec()).with_attack(raw_attack(vec![constant(0, truth)]));
            let mut trimmed = named(c.clone(), &format!("{name}_trimmed"), seed);
            trimmed.algorithm = Algorithm::Trimmed;
            (
                "agent 0 stubbornly broadcasts the attack-free consensus, both algorithms",
                PresetPlan::Compare { repc: named(c, &format!("{name}_repc"), seed), trimmed },
            )
        }
        "error_sweep" => {
            let base = k5().with_attack(raw_attack(vec![AgentAttack {
                agent: 0,
                strategy: Strategy::Gaussian { mu: 0.5, sigma: 0.5 },
            }]));
            let (mus, sigmas): (Vec<f64>, Vec<f64>) = if opts.full_grid {
                warnings.push("full 201 x 181 grid with 20 repeats: about 1.5 million runs".into());
                (
                    (0..=200).map(|i| i as f64 * 0.005).collect(),
                    (0..=180).map(|i| 0.1 + i as f64 * 0.005).collect(),
                )
            } else {
                (vec![0.0, 0.25, 0.5, 0.75, 1.0], vec![0.1, 0.5, 1.0])
            };
            let axes = vec![
                ("/attack/agents/0/mu".to_string(), mus.into_iter().map(|v| json!(v)).collect()),
                ("/attack/agents/0/sigma".to_string(), sigmas.into_iter().map(|v| json!(v)).collect()),
            ];
            (
                "mean consensus error under a Gaussian agent 0 over a (mu, sigma) grid",
                PresetPlan::Sweep { base: named(base, name, seed), axes, repeats: 20 },
            )
        }
        other => {
            return Err(Error::arg(format!("unknown preset {other:?}; expected one of {}", PRESET_NAMES.join(", "))));
        }
    };
    Ok(Preset { name: name.to_string(), description, seed, plan, warnings })
}

/// What executing a preset produced.
#[derive(Debug, Clone, Default)]
pub struct PresetReport {
    /// Human-readable summary, one fact per line.
    pub lines: Vec<String>,
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

fn write(report: &mut PresetReport, path: PathBuf, contents: &str) -> Result<()> {
    fs::write(&path, contents)?;
    report.files.push(path);
    Ok(())
}

fn pretty(v: &Value) -> String {
    serde_json::to_string_pretty(v).expect("json") + "\n"
}

/// Writes traces, plots and a summary for one run and, when attacked, its reference.
pub fn write_run_artifacts(
    result: &RunResult,
    reference: Option<(&RunResult, &Metrics)>,
    dir: &Path,
    stem: &str,
    report: &mut PresetReport,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write(report, dir.join(format!("{stem}_config.json")), &pretty(&result.config.to_value()))?;
    let files = emit_trace(result, dir, stem)?;
    report.files.extend([files.states, files.reputations]);
    let reference_value = reference.map(|(r, _)| r.consensus_value());
    write(report, dir.join(format!("{stem}_states.svg")), &states_svg(result, reference_value)?)?;
    if let Some(&watcher) = result.regular.first() {
        write(
            report,
            dir.join(format!("{stem}_reputations_agent{watcher}.svg")),
            &reputations_svg(result, watcher)?,
        )?;
    }
    let mut summary = summary_json(result, reference.map(|(_, m)| m));
    if let Some(v) = reference_value {
        summary["reference_consensus_value"] = json!(v);
    }
    write(report, dir.join(format!("{stem}_summary.json")), &pretty(&summary))?;

    let mut line = format!(
        "{stem}: {} after {} rounds, consensus = {:.6}",
        match result.stop {
            crate::harness::StopReason::Converged => "converged",
            crate::harness::StopReason::RoundCap => "hit the round cap",
        },
        result.rounds,
        result.consensus_value()
    );
    if let Some((r, m)) = reference {
        line += &format!(
            ", attack-free consensus = {:.6}, consensus_error = {:.3e}, false positives = {}, false negatives = {}",
            r.consensus_value(),
            m.consensus_error,
            m.false_positives,
            m.false_negatives
        );
    }
    report.lines.push(line);
    if !result.attacked.is_empty() {
        let flagged: Vec<String> = result
            .detection
            .flags
            .iter()
            .filter(|(i, _)| !result.attacked.contains(i))
            .map(|(i, s)| format!("{i}:{s:?}"))
            .collect();
        report.lines.push(format!("{stem}: flagged neighbours {}", flagged.join(" ")));
    }
    report.warnings.extend(result.warnings.iter().map(|w| format!("{stem}: {w}")));
    Ok(())
}

fn run_single(config: &SimConfig, dir: &Path, stem: &str, report: &mut PresetReport) -> Result<Metrics> {
    let (result, reference, metrics) = run_with_reference(config)?;
    let reference = (!config.attack.is_empty()).then_some((&reference, &metrics));
    write_run_artifacts(&result, reference, dir, stem, report)?;
    Ok(metrics)
}

/// Writes the sweep table, a heatmap for two-axis grids and a summary.
pub fn write_sweep_artifacts(
    table: &SweepTable,
    axes: &[(String, Vec<Value>)],
    dir: &Path,
    stem: &str,
    report: &mut PresetReport,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write(report, dir.join(format!("{stem}.csv")), &sweep_csv(table)?)?;
    if let [(x, _), (y, _)] = axes {
        write(report, dir.join(format!("{stem}_heatmap.svg")), &heatmap_svg(table, x, y)?)?;
    }
    write(report, dir.join(format!("{stem}_summary.json")), &pretty(&serde_json::to_value(table).expect("table")))?;
    let worst = table
        .cells
        .iter()
        .filter(|c| c.mean_error.is_finite())
        .max_by(|a, b| a.mean_error.total_cmp(&b.mean_error));
    report.lines.push(format!("{stem}: {} cells x {} repeats", table.cells.len(), table.repeats));
    if let Some(w) = worst {
        report.lines.push(format!(
            "{stem}: largest mean consensus_error {:.4} ± {:.4} (sem) at {}",
            w.mean_error, w.sem, w.overrides
        ));
    }
    let fp: usize = table.cells.iter().map(|c| c.false_positives).sum();
    report.lines.push(format!("{stem}: false positives over all runs = {fp}"));
    Ok(())
}

/// Runs a preset and writes its artifacts under `dir`.
pub fn execute(p: &Preset, dir: &Path) -> Result<PresetReport> {
    let mut report = PresetReport { warnings: p.warnings.clone(), ..Default::default() };
    report.lines.push(format!("{}: {} (seed {})", p.name, p.description, p.seed));
    match &p.plan {
        PresetPlan::Single(c) => {
            run_single(c, dir, &p.name, &mut report)?;
        }
        PresetPlan::Compare { repc, trimmed } => {
            let m_repc = run_single(repc, dir, &format!("{}_repc", p.name), &mut report)?;
            let m_trim = run_single(trimmed, dir, &format!("{}_trimmed", p.name), &mut report)?;
            report.lines.push(format!(
                "{}: consensus_error repc = {:.3e}, trimmed = {:.3e}",
                p.name, m_repc.consensus_error, m_trim.consensus_error
            ));
        }
        PresetPlan::Sweep { base, axes, repeats } => {
            let grid = grid_from_axes(axes);
            let table = sweep(base, &grid, *repeats, p.seed)?;
            write_sweep_artifacts(&table, axes, dir, &p.name, &mut report)?;
        }
    }
    Ok(report)
}
