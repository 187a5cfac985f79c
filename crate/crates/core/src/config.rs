//! Experiment description and its JSON form.
//!
//! Parsing walks the document by hand so that unknown keys are rejected and
//! every problem is reported at once rather than only the first.

use std::path::PathBuf;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::adversary::{AgentAttack, AttackSpec, Strategy, Units};
use crate::baseline::TrimParams;
use crate::error::{Error, Result};
use crate::repc::RepcParams;
use crate::topology::{
    make_circulant, make_complete, make_random_strongly_connected, GraphDoc, Topology, TopologySchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scheduler {
    Synchronous,
    /// A uniformly random subset of at least `min_active` agents updates each round.
    AsyncRandomSubset { min_active: usize },
    /// Every edge is kept independently with probability `edge_prob` each round.
    StochasticEdges { edge_prob: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Repc,
    Trimmed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectParams {
    /// Consecutive floor-branch recomputations needed to flag a neighbour.
    pub horizon: usize,
    /// A floor counts only when the neighbour's raw reputation trails the best
    /// proper neighbour's by more than this. The `f`-th anchor always lands on
    /// the floor, even when its discrepancy is rounding noise.
    pub tolerance: f64,
}

impl Default for DetectParams {
    fn default() -> Self {
        DetectParams { horizon: 10, tolerance: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Outputs {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub name: Option<String>,
    pub schedule: TopologySchedule,
    /// Raw initial states, before normalization.
    pub x0: Vec<f64>,
    pub params: RepcParams,
    pub attack: AttackSpec,
    pub scheduler: Scheduler,
    pub algorithm: Algorithm,
    pub trim: TrimParams,
    /// Stopping threshold on `‖x^(k+1) − x^(k)‖_∞` over regular agents, normalized units.
    pub delta: f64,
    pub round_cap: Option<u64>,
    /// Consecutive sub-`delta` rounds required to stop.
    pub settle_rounds: Option<u64>,
    pub detection: DetectParams,
    pub seed: u64,
    /// `seed` was absent from the document and defaulted to 0.
    pub seed_defaulted: bool,
    /// Keep every round in memory; otherwise only the detection window.
    pub keep_trace: bool,
    pub outputs: Outputs,
}

impl SimConfig {
    pub fn new(schedule: impl Into<TopologySchedule>, x0: Vec<f64>) -> Self {
        SimConfig {
            name: None,
            schedule: schedule.into(),
            x0,
            params: RepcParams::default(),
            attack: AttackSpec::none(),
            scheduler: Scheduler::Synchronous,
            algorithm: Algorithm::Repc,
            trim: TrimParams::default(),
            delta: 1e-9,
            round_cap: None,
            settle_rounds: None,
            detection: DetectParams::default(),
            seed: 0,
            seed_defaulted: false,
            keep_trace: true,
            outputs: Outputs::default(),
        }
    }

    pub fn n(&self) -> usize {
        self.schedule.n()
    }

    pub fn with_attack(mut self, attack: AttackSpec) -> Self {
        self.attack = attack;
        self
    }

    pub fn without_attack(&self) -> Self {
        SimConfig {
            attack: AttackSpec {
                agents: Vec::new(),
                ..self.attack.clone()
            },
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        self.collect_errors(&mut errs);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs))
        }
    }

    fn collect_errors(&self, errs: &mut Vec<String>) {
        let n = self.n();
        if self.x0.len() != n {
            errs.push(format!("x0 has {} entries but the graph has {n} agents", self.x0.len()));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            errs.push("x0 entries must be finite".into());
        }
        if let Err(Error::Config(e)) = self.params.validate() {
            errs.extend(e);
        }
        if let Err(Error::Config(e)) = self.attack.validate(n) {
            errs.extend(e);
        }
        if let Err(Error::Config(e)) = self.trim.validate() {
            errs.extend(e);
        }
        match self.scheduler {
            Scheduler::AsyncRandomSubset { min_active } if min_active > n => {
                errs.push(format!("scheduler.min_active {min_active} exceeds the agent count {n}"))
            }
            Scheduler::StochasticEdges { edge_prob } if !(0.0..=1.0).contains(&edge_prob) => {
                errs.push("scheduler.edge_prob must lie in [0,1]".into())
            }
            _ => {}
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            errs.push("delta must be a positive number".into());
        }
        if self.round_cap == Some(0) {
            errs.push("round_cap must be at least 1".into());
        }
        if self.settle_rounds == Some(0) {
            errs.push("settle_rounds must be at least 1".into());
        }
        if self.detection.horizon == 0 {
            errs.push("detection_horizon must be at least 1".into());
        }
        if !(self.detection.tolerance >= 0.0 && self.detection.tolerance.is_finite()) {
            errs.push("detection_tolerance must be a finite nonnegative number".into());
        }
    }

    /// Canonical JSON document; `parse_config` of the result yields `self`.
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        if let Some(name) = &self.name {
            m.insert("name".into(), json!(name));
        }
        if self.schedule.pieces().len() == 1 {
            m.insert("graph".into(), serde_json::to_value(&self.schedule.pieces()[0].1).expect("graph"));
        } else {
            m.insert("schedule".into(), serde_json::to_value(&self.schedule).expect("schedule"));
        }
        m.insert("x0".into(), json!(self.x0));
        m.insert("epsilon".into(), json!(self.params.epsilon));
        m.insert("f".into(), json!(self.params.f));
        m.insert("include_self_in_discrepancy".into(), json!(self.params.include_self_in_discrepancy));
        m.insert("fresh_reputation_in_update".into(), json!(self.params.fresh_reputation_in_update));
        m.insert("self_weight_in_update".into(), json!(self.params.self_weight_in_update));
        m.insert(
            "attack".into(),
            json!({
                "start_round": self.attack.start_round,
                "clamp": self.attack.clamp,
                "units": self.attack.units,
                "agents": self.attack.agents,
            }),
        );
        m.insert("scheduler".into(), serde_json::to_value(self.scheduler).expect("scheduler"));
        m.insert("algorithm".into(), serde_json::to_value(self.algorithm).expect("algorithm"));
        m.insert("f_trim".into(), json!(self.trim.f_trim));
        m.insert("trim_self".into(), serde_json::to_value(self.trim.self_mode).expect("self mode"));
        m.insert("delta".into(), json!(self.delta));
        if let Some(cap) = self.round_cap {
            m.insert("round_cap".into(), json!(cap));
        }
        if let Some(s) = self.settle_rounds {
            m.insert("settle_rounds".into(), json!(s));
        }
        m.insert("detection_horizon".into(), json!(self.detection.horizon));
        m.insert("detection_tolerance".into(), json!(self.detection.tolerance));
        if !self.seed_defaulted {
            m.insert("seed".into(), json!(self.seed));
        }
        m.insert("keep_trace".into(), json!(self.keep_trace));
        if let Some(dir) = &self.outputs.dir {
            m.insert("outputs".into(), json!({ "dir": dir }));
        }
        Value::Object(m)
    }
}

const TOP_KEYS: &[&str] = &[
    "name",
    "graph",
    "schedule",
    "x0",
    "epsilon",
    "f",
    "include_self_in_discrepancy",
    "fresh_reputation_in_update",
    "self_weight_in_update",
    "attack",
    "scheduler",
    "algorithm",
    "f_trim",
    "trim_self",
    "delta",
    "round_cap",
    "settle_rounds",
    "detection_horizon",
    "detection_tolerance",
    "seed",
    "keep_trace",
    "outputs",
];

struct Fields<'a> {
    map: &'a Map<String, Value>,
    path: &'a str,
}

impl<'a> Fields<'a> {
    fn open(v: &'a Value, path: &'a str, allowed: &[&str], errs: &mut Vec<String>) -> Option<Self> {
        let Some(map) = v.as_object() else {
            errs.push(format!("{path}: expected an object"));
            return None;
        };
        for key in map.keys() {
            if !allowed.contains(&key.as_str()) {
                errs.push(format!("{}: unknown key \"{key}\"", if path.is_empty() { "config" } else { path }));
            }
        }
        Some(Fields { map, path })
    }

    fn name(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn get<T: DeserializeOwned>(&self, key: &str, errs: &mut Vec<String>) -> Option<T> {
        let v = self.map.get(key)?;
        match T::deserialize(v) {
            Ok(t) => Some(t),
            Err(e) => {
                errs.push(format!("{}: {e}", self.name(key)));
                None
            }
        }
    }

    fn raw(&self, key: &str) -> Option<&'a Value> {
        self.map.get(key)
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let doc: Value = serde_json::from_str(text)?;
    config_from_value(&doc)
}

pub fn config_from_value(doc: &Value) -> Result<SimConfig> {
    let mut errs = Vec::new();
    let Some(top) = Fields::open(doc, "", TOP_KEYS, &mut errs) else {
        return Err(Error::Config(errs));
    };

    let schedule = match (top.raw("graph"), top.raw("schedule")) {
        (Some(_), Some(_)) => {
            errs.push("give either \"graph\" or \"schedule\", not both".into());
            None
        }
        (Some(g), None) => parse_graph(g, "graph", &mut errs).map(TopologySchedule::from),
        (None, Some(s)) => parse_schedule(s, &mut errs),
        (None, None) => {
            errs.push("missing \"graph\" or \"schedule\"".into());
            None
        }
    };
    let x0: Option<Vec<f64>> = top.get("x0", &mut errs);
    if top.raw("x0").is_none() {
        errs.push("missing \"x0\"".into());
    }

    let d = RepcParams::default();
    let params = RepcParams {
        epsilon: top.get("epsilon", &mut errs).unwrap_or(d.epsilon),
        f: top.get("f", &mut errs).unwrap_or(d.f),
        include_self_in_discrepancy: top
            .get("include_self_in_discrepancy", &mut errs)
            .unwrap_or(d.include_self_in_discrepancy),
        fresh_reputation_in_update: top
            .get("fresh_reputation_in_update", &mut errs)
            .unwrap_or(d.fresh_reputation_in_update),
        self_weight_in_update: top.get("self_weight_in_update", &mut errs).unwrap_or(d.self_weight_in_update),
    };

    let attack = match top.raw("attack") {
        Some(a) => parse_attack(a, &mut errs),
        None => AttackSpec::none(),
    };
    let scheduler = match top.raw("scheduler") {
        Some(s) => parse_scheduler(s, &mut errs),
        None => Scheduler::Synchronous,
    };
    let td = TrimParams::default();
    let seed: Option<u64> = top.get("seed", &mut errs);
    let outputs = match top.raw("outputs") {
        Some(o) => match Fields::open(o, "outputs", &["dir"], &mut errs) {
            Some(of) => Outputs { dir: of.get("dir", &mut errs) },
            None => Outputs::default(),
        },
        None => Outputs::default(),
    };

    let cfg = SimConfig {
        name: top.get("name", &mut errs),
        schedule: schedule.clone().unwrap_or_else(|| make_complete(2).expect("K2").into()),
        x0: x0.clone().unwrap_or_default(),
        params,
        attack,
        scheduler,
        algorithm: top.get("algorithm", &mut errs).unwrap_or(Algorithm::Repc),
        trim: TrimParams {
            f_trim: top.get("f_trim", &mut errs).unwrap_or(td.f_trim),
            self_mode: top.get("trim_self", &mut errs).unwrap_or(td.self_mode),
        },
        delta: top.get("delta", &mut errs).unwrap_or(1e-9),
        round_cap: top.get("round_cap", &mut errs),
        settle_rounds: top.get("settle_rounds", &mut errs),
        detection: DetectParams {
            horizon: top.get("detection_horizon", &mut errs).unwrap_or(DetectParams::default().horizon),
            tolerance: top.get("detection_tolerance", &mut errs).unwrap_or(DetectParams::default().tolerance),
        },
        seed: seed.unwrap_or(0),
        seed_defaulted: top.raw("seed").is_none(),
        keep_trace: top.get("keep_trace", &mut errs).unwrap_or(true),
        outputs,
    };
    if schedule.is_some() && x0.is_some() {
        cfg.collect_errors(&mut errs);
    } else {
        // Without a graph the structural checks are meaningless; still range-check parameters.
        if let Err(Error::Config(e)) = cfg.params.validate() {
            errs.extend(e);
        }
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(errs))
    }
}

/// Canonical `{"n", "edges"}` or a generator shorthand:
/// `{"complete": n}`, `{"circulant": {"n", "offsets"}}`,
/// `{"random": {"n", "extra_edge_prob", "seed"}}`.
fn parse_graph(v: &Value, path: &str, errs: &mut Vec<String>) -> Option<Topology> {
    let obj = v.as_object();
    let result = if obj.is_some_and(|o| o.contains_key("complete")) {
        let f = Fields::open(v, path, &["complete"], errs)?;
        make_complete(f.get("complete", errs)?)
    } else if obj.is_some_and(|o| o.contains_key("circulant")) {
        let f = Fields::open(v, path, &["circulant"], errs)?;
        let inner_path = format!("{path}.circulant");
        let c = Fields::open(f.raw("circulant")?, &inner_path, &["n", "offsets"], errs)?;
        let offsets: Vec<usize> = c.get("offsets", errs)?;
        make_circulant(c.get("n", errs)?, &offsets)
    } else if obj.is_some_and(|o| o.contains_key("random")) {
        let f = Fields::open(v, path, &["random"], errs)?;
        let inner_path = format!("{path}.random");
        let r = Fields::open(f.raw("random")?, &inner_path, &["n", "extra_edge_prob", "seed"], errs)?;
        make_random_strongly_connected(r.get("n", errs)?, r.get("extra_edge_prob", errs)?, r.get("seed", errs)?)
    } else {
        match GraphDoc::deserialize(v) {
            Ok(doc) => Topology::try_from(doc),
            Err(e) => {
                errs.push(format!("{path}: {e}"));
                return None;
            }
        }
    };
    match result {
        Ok(t) => Some(t),
        Err(e) => {
            errs.push(format!("{path}: {e}"));
            None
        }
    }
}

fn parse_schedule(v: &Value, errs: &mut Vec<String>) -> Option<TopologySchedule> {
    let f = Fields::open(v, "schedule", &["pieces"], errs)?;
    let Some(pieces) = f.raw("pieces").and_then(Value::as_array) else {
        errs.push("schedule.pieces: expected an array".into());
        return None;
    };
    let mut out = Vec::new();
    for (i, p) in pieces.iter().enumerate() {
        let path = format!("schedule.pieces[{i}]");
        let pf = Fields::open(p, &path, &["from", "graph"], errs)?;
        let from: u64 = pf.get("from", errs)?;
        let graph = parse_graph(pf.raw("graph")?, &format!("{path}.graph"), errs)?;
        out.push((from, graph));
    }
    match TopologySchedule::new(out) {
        Ok(s) => Some(s),
        Err(e) => {
            errs.push(format!("schedule: {e}"));
            None
        }
    }
}

fn parse_attack(v: &Value, errs: &mut Vec<String>) -> AttackSpec {
    let d = AttackSpec::default();
    let Some(f) = Fields::open(v, "attack", &["start_round", "clamp", "units", "agents"], errs) else {
        return d;
    };
    let units: Units = f.get("units", errs).unwrap_or(d.units);
    let mut agents = Vec::new();
    if let Some(list) = f.raw("agents") {
        match list.as_array() {
            Some(items) => {
                for (i, item) in items.iter().enumerate() {
                    if let Some(a) = parse_agent_attack(item, &format!("attack.agents[{i}]"), errs) {
                        agents.push(a);
                    }
                }
            }
            None => errs.push("attack.agents: expected an array".into()),
        }
    }
    AttackSpec {
        agents,
        start_round: f.get("start_round", errs).unwrap_or(d.start_round),
        clamp: f.get("clamp", errs).unwrap_or(d.clamp),
        units,
    }
}

fn parse_agent_attack(v: &Value, path: &str, errs: &mut Vec<String>) -> Option<AgentAttack> {
    let kind = v.get("kind").and_then(Value::as_str);
    let fields: &[&str] = match kind {
        Some("constant") => &["agent", "kind", "value"],
        Some("converging") => &["agent", "kind", "target", "rate"],
        Some("gaussian") => &["agent", "kind", "mu", "sigma"],
        Some("uniform") => &["agent", "kind", "mean", "half_width"],
        Some("replay") => &["agent", "kind", "values"],
        other => {
            errs.push(format!(
                "{path}: kind must be one of constant, converging, gaussian, uniform, replay (got {other:?})"
            ));
            return None;
        }
    };
    let f = Fields::open(v, path, fields, errs)?;
    let agent = f.get("agent", errs)?;
    let need = |key: &str, errs: &mut Vec<String>| -> Option<f64> {
        if f.raw(key).is_none() {
            errs.push(format!("{path}: missing \"{key}\""));
        }
        f.get(key, errs)
    };
    let strategy = match kind? {
        "constant" => Strategy::Constant { value: need("value", errs)? },
        "converging" => Strategy::Converging { target: need("target", errs)?, rate: need("rate", errs)? },
        "gaussian" => Strategy::Gaussian { mu: need("mu", errs)?, sigma: need("sigma", errs)? },
        "uniform" => Strategy::Uniform { mean: need("mean", errs)?, half_width: need("half_width", errs)? },
        _ => Strategy::Replay { values: f.get("values", errs)? },
    };
    Some(AgentAttack { agent, strategy })
}

fn parse_scheduler(v: &Value, errs: &mut Vec<String>) -> Scheduler {
    let kind = v.get("kind").and_then(Value::as_str);
    match kind {
        Some("synchronous") => {
            Fields::open(v, "scheduler", &["kind"], errs);
            Scheduler::Synchronous
        }
        Some("async_random_subset") => {
            let min_active = Fields::open(v, "scheduler", &["kind", "min_active"], errs)
                .and_then(|f| f.get("min_active", errs))
                .unwrap_or(1);
            Scheduler::AsyncRandomSubset { min_active }
        }
        Some("stochastic_edges") => {
            let edge_prob = Fields::open(v, "scheduler", &["kind", "edge_prob"], errs)
                .and_then(|f| {
                    if f.raw("edge_prob").is_none() {
                        errs.push("scheduler: missing \"edge_prob\"".into());
                    }
                    f.get("edge_prob", errs)
                })
                .unwrap_or(1.0);
            Scheduler::StochasticEdges { edge_prob }
        }
        other => {
            errs.push(format!(
                "scheduler.kind must be synchronous, async_random_subset or stochastic_edges (got {other:?})"
            ));
            Scheduler::Synchronous
        }
    }
}

/// Recursive JSON merge: objects merge key by key, everything else replaces.
pub fn merge_json(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge_json(b.entry(k.clone()).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const K5: &str = r#"{"graph": {"complete": 5}, "x0": [1, 0, 3, 1.2, 2.5], "seed": 3}"#;

    fn errors(text: &str) -> Vec<String> {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_document() {
        let c = parse_config(K5).unwrap();
        assert_eq!(c.n(), 5);
        assert_eq!(c.params, RepcParams::default());
        assert_eq!(c.seed, 3);
        assert!(!c.seed_defaulted);
        assert_eq!(c.delta, 1e-9);
    }

    #[test]
    fn missing_seed_defaults_to_zero() {
        let c = parse_config(r#"{"graph": {"complete": 3}, "x0": [0, 1, 2]}"#).unwrap();
        assert_eq!(c.seed, 0);
        assert!(c.seed_defaulted);
    }

    #[test]
    fn epsilon_range() {
        let e = errors(r#"{"graph": {"complete": 3}, "x0": [0, 1, 2], "epsilon": 1.5}"#);
        assert_eq!(e, vec!["epsilon must lie in (0,1)".to_string()]);
    }

    #[test]
    fn reports_every_problem() {
        let e = errors(
            r#"{"graph": {"complete": 3}, "x0": [0, 1], "epsilion": 0.2, "delta": -1,
                "attack": {"agents": [{"agent": 5, "kind": "constant", "value": 0.1, "extra": 1}]},
                "scheduler": {"kind": "warp"}}"#,
        );
        let joined = e.join("\n");
        for needle in ["unknown key \"epsilion\"", "unknown key \"extra\"", "x0 has 2 entries", "delta", "agent 5", "warp"] {
            assert!(joined.contains(needle), "missing {needle:?} in\n{joined}");
        }
    }

    #[test]
    fn graph_forms_and_schedules() {
        let c = parse_config(
            r#"{"schedule": {"pieces": [
                    {"from": 0, "graph": {"circulant": {"n": 4, "offsets": [1, 2]}}},
                    {"from": 11, "graph": {"n": 4, "edges": [[0, 1], [1, 2], [2, 3], [3, 0]]}}]},
                "x0": [0, 1, 2, 3],
                "scheduler": {"kind": "stochastic_edges", "edge_prob": 0.5}}"#,
        )
        .unwrap();
        assert_eq!(c.schedule.pieces().len(), 2);
        assert_eq!(c.schedule.lookup(3).in_degree(0), 2);
        assert_eq!(c.scheduler, Scheduler::StochasticEdges { edge_prob: 0.5 });
        let r = parse_config(r#"{"graph": {"random": {"n": 6, "extra_edge_prob": 0.2, "seed": 1}}, "x0": [0,1,2,3,4,5]}"#);
        assert!(r.is_ok());
    }

    #[test]
    fn canonical_round_trip() {
        let mut c = parse_config(K5).unwrap();
        c.attack.agents.push(AgentAttack { agent: 0, strategy: Strategy::Uniform { mean: 0.3, half_width: 0.1 } });
        c.attack.units = Units::Raw;
        c.scheduler = Scheduler::AsyncRandomSubset { min_active: 2 };
        c.round_cap = Some(77);
        let back = config_from_value(&c.to_value()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn merge_patches() {
        let mut base = json!({"a": {"b": 1, "c": 2}, "d": [1]});
        merge_json(&mut base, &json!({"a": {"b": 5}, "d": [2, 3]}));
        assert_eq!(base, json!({"a": {"b": 5, "c": 2}, "d": [2, 3]}));
    }
}
