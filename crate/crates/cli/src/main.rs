//! `repc`: run configured consensus experiments, named scenarios and sweeps.
//!
//! Exit codes: 0 success, 1 validation error, 2 runtime error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use repc_core::config::parse_config;
use repc_core::harness::{grid_from_axes, run_with_reference, sweep, GridCell, Override};
use repc_core::presets::{execute, preset, write_run_artifacts, write_sweep_artifacts, PresetOptions, PresetReport};
use repc_core::Error;

#[derive(Parser)]
#[command(name = "repc", version, about = "Reputation-based resilient consensus simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment described by a JSON configuration.
    Run {
        config: PathBuf,
        /// Output directory; overrides the configuration's `outputs.dir`.
        #[arg(long, env = "REPC_OUT")]
        out: Option<PathBuf>,
    },
    /// Run a named scenario.
    Preset {
        name: String,
        #[arg(long, env = "REPC_OUT", default_value = "repc-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Use the reduced 5 x 3 error grid (the default).
        #[arg(long, conflicts_with = "full_grid")]
        desk_scale: bool,
        /// Use the full 201 x 181 error grid.
        #[arg(long)]
        full_grid: bool,
    },
    /// Run a configuration over a grid of overrides.
    Sweep {
        config: PathBuf,
        /// `{"repeats": R, "seed": S, "axes": [{"path": "/json/pointer", "values": [...]}]}`,
        /// or `"cells": [patch, ...]` with merge patches instead of axes.
        grid: PathBuf,
        #[arg(long, env = "REPC_OUT")]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::Runtime(format!("cannot read {}: {e}", path.display())))
}

fn out_dir(flag: Option<PathBuf>, configured: Option<PathBuf>) -> PathBuf {
    flag.or(configured).unwrap_or_else(|| PathBuf::from("repc-out"))
}

fn stem_of(path: &Path, name: Option<&str>) -> String {
    name.map(str::to_string)
        .or_else(|| path.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .unwrap_or_else(|| "run".to_string())
}

struct Grid {
    cells: Vec<GridCell>,
    axes: Vec<(String, Vec<Value>)>,
    repeats: usize,
    seed: Option<u64>,
}

fn parse_grid(text: &str) -> Result<Grid, Error> {
    let doc: Value = serde_json::from_str(text)?;
    let mut errs = Vec::new();
    let Some(obj) = doc.as_object() else {
        return Err(Error::Config(vec!["grid: expected an object".into()]));
    };
    for k in obj.keys() {
        if !["repeats", "seed", "axes", "cells"].contains(&k.as_str()) {
            errs.push(format!("grid: unknown key \"{k}\""));
        }
    }
    let repeats = match obj.get("repeats") {
        None => 1,
        Some(v) => v.as_u64().filter(|&r| r >= 1).map(|r| r as usize).unwrap_or_else(|| {
            errs.push("grid.repeats must be a positive integer".into());
            1
        }),
    };
    let seed = match obj.get("seed") {
        None => None,
        Some(v) => v.as_u64().or_else(|| {
            errs.push("grid.seed must be a nonnegative integer".into());
            None
        }),
    };
    let mut axes = Vec::new();
    if let Some(list) = obj.get("axes") {
        for (i, a) in list.as_array().into_iter().flatten().enumerate() {
            match (a.get("path").and_then(Value::as_str), a.get("values").and_then(Value::as_array)) {
                (Some(p), Some(vs)) if !vs.is_empty() => axes.push((p.to_string(), vs.clone())),
                _ => errs.push(format!("grid.axes[{i}] needs a \"path\" string and a nonempty \"values\" array")),
            }
        }
    }
    let mut cells = grid_from_axes(&axes);
    if let Some(list) = obj.get("cells") {
        if !axes.is_empty() {
            errs.push("grid: give either \"axes\" or \"cells\", not both".into());
        }
        match list.as_array() {
            Some(items) => cells = items.iter().map(|p| GridCell(vec![Override::Merge(p.clone())])).collect(),
            None => errs.push("grid.cells must be an array".into()),
        }
    } else if axes.is_empty() {
        errs.push("grid needs \"axes\" or \"cells\"".into());
    }
    if cells.is_empty() {
        errs.push("grid has no cells".into());
    }
    if errs.is_empty() {
        Ok(Grid { cells, axes, repeats, seed })
    } else {
        Err(Error::Config(errs))
    }
}

fn print_report(report: &PresetReport) {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    for l in &report.lines {
        println!("{l}");
    }
    for f in &report.files {
        println!("wrote {}", f.display());
    }
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = parse_config(&read(&config)?)?;
            let dir = out_dir(out, cfg.outputs.dir.clone());
            let stem = stem_of(&config, cfg.name.as_deref());
            let (result, reference, metrics) = run_with_reference(&cfg)?;
            let mut report = PresetReport::default();
            if cfg.seed_defaulted {
                report.lines.push("# seed not given, defaulted to 0".into());
            }
            let reference = (!cfg.attack.is_empty()).then_some((&reference, &metrics));
            write_run_artifacts(&result, reference, &dir, &stem, &mut report)?;
            print_report(&report);
        }
        Command::Preset { name, out, seed, desk_scale: _, full_grid } => {
            let p = preset(&name, &PresetOptions { seed, full_grid })?;
            for w in &p.warnings {
                eprintln!("warning: {w}");
            }
            let mut report = execute(&p, &out)?;
            report.warnings.retain(|w| !p.warnings.contains(w));
            print_report(&report);
        }
        Command::Sweep { config, grid, out } => {
            let cfg = parse_config(&read(&config)?)?;
            let g = parse_grid(&read(&grid)?)?;
            let dir = out_dir(out, cfg.outputs.dir.clone());
            let stem = stem_of(&config, cfg.name.as_deref()) + "_sweep";
            let table = sweep(&cfg, &g.cells, g.repeats, g.seed.unwrap_or(cfg.seed))?;
            let mut report = PresetReport::default();
            write_sweep_artifacts(&table, &g.axes, &dir, &stem, &mut report)?;
            print_report(&report);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config(_) | Error::Argument(_) | Error::Json(_) => 1,
                Error::Io(_) | Error::Runtime(_) => 2,
            })
        }
    }
}
