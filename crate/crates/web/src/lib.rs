//! Browser bindings: load a scenario, simulate it, and compare against the
//! trimmed-mean baseline. Every entry point takes and returns JSON text.

use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

use repc_core::config::{config_from_value, Algorithm, SimConfig};
use repc_core::harness::{run, run_with_reference, RunResult};
use repc_core::plot::{reputations_svg, states_svg};
use repc_core::presets::{preset, PresetOptions, PresetPlan, PRESET_NAMES};

/// Scenarios that run as a single simulation, so the page can offer them.
#[wasm_bindgen]
pub fn preset_names() -> String {
    let names: Vec<&str> = PRESET_NAMES
        .iter()
        .copied()
        .filter(|n| preset_config(n).is_ok())
        .collect();
    json!(names).to_string()
}

/// Editable configuration document of a named scenario.
#[wasm_bindgen]
pub fn preset_config(name: &str) -> Result<String, String> {
    let p = preset(name, &PresetOptions::default()).map_err(|e| e.to_string())?;
    let cfg = match p.plan {
        PresetPlan::Single(c) => c,
        PresetPlan::Compare { repc, .. } => repc,
        PresetPlan::Sweep { .. } => return Err(format!("{name} is a parameter sweep; use the command line")),
    };
    serde_json::to_string_pretty(&cfg.to_value()).map_err(|e| e.to_string())
}

fn parse(config: &str) -> Result<SimConfig, String> {
    let doc: Value = serde_json::from_str(config).map_err(|e| format!("invalid JSON: {e}"))?;
    let mut cfg = config_from_value(&doc).map_err(|e| e.to_string())?;
    cfg.keep_trace = true;
    Ok(cfg)
}

fn flags(r: &RunResult) -> Value {
    r.detection
        .flags
        .iter()
        .map(|(i, js)| (i.to_string(), json!(js)))
        .collect::<serde_json::Map<_, _>>()
        .into()
}

/// Runs a configuration and its attack-free reference. Returns the summary,
/// the state plot and the reputation plot of `watch_agent`.
#[wasm_bindgen]
pub fn simulate(config: &str, watch_agent: usize) -> Result<String, String> {
    let cfg = parse(config)?;
    if watch_agent >= cfg.n() {
        return Err(format!("agent {watch_agent} out of range 0..{}", cfg.n()));
    }
    let (result, reference, metrics) = run_with_reference(&cfg).map_err(|e| e.to_string())?;
    let attacked = !cfg.attack.is_empty();
    let states = states_svg(&result, attacked.then(|| reference.consensus_value())).map_err(|e| e.to_string())?;
    let reputations = reputations_svg(&result, watch_agent).map_err(|e| e.to_string())?;
    Ok(json!({
        "rounds": result.rounds,
        "converged": result.converged(),
        "consensus": result.consensus_value(),
        "reference": reference.consensus_value(),
        "metrics": metrics,
        "flags": flags(&result),
        "warnings": result.warnings,
        "states_svg": states,
        "reputations_svg": reputations,
    })
    .to_string())
}

/// Runs the configuration under both algorithms with the same attack.
#[wasm_bindgen]
pub fn compare_baseline(config: &str, f_trim: usize) -> Result<String, String> {
    let mut repc = parse(config)?;
    repc.algorithm = Algorithm::Repc;
    let mut trimmed = repc.clone();
    trimmed.algorithm = Algorithm::Trimmed;
    trimmed.trim.f_trim = f_trim;
    let reference = run(&repc.without_attack()).map_err(|e| e.to_string())?.consensus_value();
    let side = |cfg: &SimConfig| -> Result<Value, String> {
        let r = run(cfg).map_err(|e| e.to_string())?;
        Ok(json!({
            "consensus": r.consensus_value(),
            "error": (r.consensus_value() - reference).abs(),
            "rounds": r.rounds,
            "converged": r.converged(),
            "states_svg": states_svg(&r, Some(reference)).map_err(|e| e.to_string())?,
        }))
    };
    Ok(json!({
        "reference": reference,
        "repc": side(&repc)?,
        "trimmed": side(&trimmed)?,
    })
    .to_string())
}
