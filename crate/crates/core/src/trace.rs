//! CSV and JSON emitters for run traces and sweep tables.
//!
//! Floats are written with 17 significant digits so every value parses back
//! to the identical double, and output bytes depend only on the inputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::error::{Error, Result};
use crate::harness::{Metrics, RoundTrace, RunResult, SweepTable};

/// Header of the state trace: one row per agent per executed round.
pub const STATES_HEADER: [&str; 3] = ["k", "agent", "x"];
/// Header of the reputation trace: nonzero entries of `c^(k+1)` per round.
pub const REPUTATIONS_HEADER: [&str; 4] = ["k", "agent", "neighbor", "c"];

pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Runtime(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Runtime(e.to_string()))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Runtime(format!("csv: {e}"))
}

/// Broadcast states `x^(k)` (normalized) of every recorded round.
pub fn states_csv(trace: &[RoundTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(STATES_HEADER).map_err(csv_err)?;
    for r in trace {
        for (i, &x) in r.x.iter().enumerate() {
            w.write_record([r.k.to_string(), i.to_string(), fmt_f64(x)]).map_err(csv_err)?;
        }
    }
    finish(w)
}

/// Reputations `c^(k+1)` produced in every recorded round; zero entries omitted.
pub fn reputations_csv(trace: &[RoundTrace]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(REPUTATIONS_HEADER).map_err(csv_err)?;
    for r in trace {
        for (i, row) in r.c.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                if c != 0.0 {
                    w.write_record([r.k.to_string(), i.to_string(), j.to_string(), fmt_f64(c)])
                        .map_err(csv_err)?;
                }
            }
        }
    }
    finish(w)
}

fn reader<'a>(text: &'a str, header: &[&str]) -> Result<csv::Reader<&'a [u8]>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let got = r.headers().map_err(csv_err)?;
    if got.iter().ne(header.iter().copied()) {
        return Err(Error::Runtime(format!("unexpected csv header {got:?}, expected {header:?}")));
    }
    Ok(r)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Runtime(format!("bad csv field {i} in {rec:?}")))
}

/// Parses [`states_csv`] output into `(k, x^(k))` pairs.
pub fn parse_states_csv(text: &str) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut out: Vec<(u64, Vec<f64>)> = Vec::new();
    for rec in reader(text, &STATES_HEADER)?.records() {
        let rec = rec.map_err(csv_err)?;
        let (k, agent, x): (u64, usize, f64) = (field(&rec, 0)?, field(&rec, 1)?, field(&rec, 2)?);
        if out.last().is_none_or(|(lk, _)| *lk != k) {
            out.push((k, Vec::new()));
        }
        let row = &mut out.last_mut().expect("pushed").1;
        if agent != row.len() {
            return Err(Error::Runtime(format!("round {k}: agent {agent} out of order")));
        }
        row.push(x);
    }
    Ok(out)
}

/// Parses [`reputations_csv`] output into dense `(k, c)` matrices of size `n`.
pub fn parse_reputations_csv(text: &str, n: usize) -> Result<Vec<(u64, Vec<Vec<f64>>)>> {
    let mut out: Vec<(u64, Vec<Vec<f64>>)> = Vec::new();
    for rec in reader(text, &REPUTATIONS_HEADER)?.records() {
        let rec = rec.map_err(csv_err)?;
        let (k, i, j, c): (u64, usize, usize, f64) = (field(&rec, 0)?, field(&rec, 1)?, field(&rec, 2)?, field(&rec, 3)?);
        if i >= n || j >= n {
            return Err(Error::Runtime(format!("round {k}: entry ({i}, {j}) outside {n} agents")));
        }
        if out.last().is_none_or(|(lk, _)| *lk != k) {
            out.push((k, vec![vec![0.0; n]; n]));
        }
        out.last_mut().expect("pushed").1[i][j] = c;
    }
    Ok(out)
}

pub fn summary_json(result: &RunResult, metrics: Option<&Metrics>) -> serde_json::Value {
    json!({
        "name": result.config.name,
        "seed": result.config.seed,
        "seed_defaulted": result.config.seed_defaulted,
        "rounds": result.rounds,
        "stop": result.stop,
        "round_cap": result.round_cap,
        "rate_bound": result.rate,
        "consensus_value": result.consensus_value(),
        "final_states": result.final_raw,
        "attacked": result.attacked,
        "detected": result.detection.flags,
        "detection_low_confidence": result.detection.low_confidence,
        "metrics": metrics,
        "warnings": result.warnings,
    })
}

/// Files written by [`emit_trace`].
#[derive(Debug, Clone)]
pub struct TraceFiles {
    pub states: PathBuf,
    pub reputations: PathBuf,
}

/// Writes `<stem>_states.csv` and `<stem>_reputations.csv` into `dir`.
pub fn emit_trace(result: &RunResult, dir: &Path, stem: &str) -> Result<TraceFiles> {
    fs::create_dir_all(dir)?;
    let files = TraceFiles {
        states: dir.join(format!("{stem}_states.csv")),
        reputations: dir.join(format!("{stem}_reputations.csv")),
    };
    fs::write(&files.states, states_csv(&result.trace)?)?;
    fs::write(&files.reputations, reputations_csv(&result.trace)?)?;
    Ok(files)
}

/// One row per cell: its overrides as compact JSON, then the statistics.
pub fn sweep_csv(table: &SweepTable) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "cell",
        "overrides",
        "runs",
        "mean_error",
        "std_error",
        "sem",
        "max_error",
        "mean_spread",
        "false_positives",
        "false_negatives",
        "converged",
        "invalid",
    ])
    .map_err(csv_err)?;
    for c in &table.cells {
        w.write_record([
            c.cell.to_string(),
            c.overrides.to_string(),
            c.runs.to_string(),
            fmt_f64(c.mean_error),
            fmt_f64(c.std_error),
            fmt_f64(c.sem),
            fmt_f64(c.max_error),
            fmt_f64(c.mean_spread),
            c.false_positives.to_string(),
            c.false_negatives.to_string(),
            c.converged.to_string(),
            c.invalid.to_string(),
        ])
        .map_err(csv_err)?;
    }
    finish(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::SimConfig;
    use crate::harness::run;
    use crate::topology::make_complete;

    fn result() -> RunResult {
        let mut c = SimConfig::new(make_complete(4).unwrap(), vec![0.3, 1.0 / 3.0, 2.0, 7.0]);
        c.seed = 2;
        run(&c).unwrap()
    }

    #[test]
    fn states_round_trip() {
        let r = result();
        let text = states_csv(&r.trace).unwrap();
        assert!(text.starts_with("k,agent,x\n"));
        assert_eq!(text.lines().count(), 1 + 4 * r.trace.len());
        let parsed = parse_states_csv(&text).unwrap();
        let expect: Vec<(u64, Vec<f64>)> = r.trace.iter().map(|t| (t.k, t.x.clone())).collect();
        assert_eq!(parsed, expect);
    }

    #[test]
    fn reputations_round_trip() {
        let r = result();
        let text = reputations_csv(&r.trace).unwrap();
        let parsed = parse_reputations_csv(&text, 4).unwrap();
        let expect: Vec<(u64, Vec<Vec<f64>>)> = r.trace.iter().map(|t| (t.k, t.c.clone())).collect();
        assert_eq!(parsed, expect);
    }

    #[test]
    fn one_round_two_agents() {
        let mut c = SimConfig::new(make_complete(2).unwrap(), vec![0.0, 1.0]);
        c.round_cap = Some(1);
        let r = run(&c).unwrap();
        assert_eq!(r.rounds, 1);
        assert_eq!(states_csv(&r.trace).unwrap().lines().count(), 3);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(parse_states_csv("a,b,c\n0,0,1\n").is_err());
    }
}
