//! Minimal standalone SVG charts.

use std::collections::BTreeSet;
use std::fmt::Write;
use std::fs;
use std::path::Path;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::harness::{RunResult, SweepTable};

pub const WIDTH: f64 = 720.0;
pub const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 36.0;
const MARGIN_B: f64 = 48.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#2ca02c", "#9467bd", "#8c564b", "#17becf", "#bcbd22", "#7f7f7f", "#e377c2"];
const ATTACK_COLOR: &str = "#d62728";

/// Linear map from data coordinates to the plotting area.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Frame {
    fn padded(x: (f64, f64), y: (f64, f64)) -> Self {
        let widen = |(a, b): (f64, f64), pad: f64| if b > a { (a, b) } else { (a - pad, b + pad) };
        let (ylo, yhi) = widen(y, 0.5);
        let m = 0.04 * (yhi - ylo);
        Frame { x: widen(x, 0.5), y: (ylo - m, yhi + m) }
    }

    pub fn px(&self, x: f64) -> f64 {
        MARGIN_L + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    pub fn py(&self, y: f64) -> f64 {
        MARGIN_T + (1.0 - (y - self.y.0) / (self.y.1 - self.y.0)) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{}", (v * 1000.0).round() / 1000.0)
    } else {
        format!("{v:.1e}")
    }
}

fn open(svg: &mut String, title: &str, frame: &Frame, xlabel: &str, ylabel: &str) {
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = write!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let (x0, x1, y0, y1) = (MARGIN_L, WIDTH - MARGIN_R, MARGIN_T, HEIGHT - MARGIN_B);
    let _ = write!(svg, r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" stroke="black" fill="none"/>"#);
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let xv = frame.x.0 + f * (frame.x.1 - frame.x.0);
        let yv = frame.y.0 + f * (frame.y.1 - frame.y.0);
        let (px, py) = (frame.px(xv), frame.py(yv));
        let _ = write!(
            svg,
            r#"<path d="M{px:.2} {y1} L{px:.2} {:.2}" stroke="black"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            y1 + 4.0,
            y1 + 18.0,
            tick_label(xv)
        );
        let _ = write!(
            svg,
            r##"<path d="M{:.2} {py:.2} L{x0} {py:.2}" stroke="black"/><path d="M{x0} {py:.2} L{x1} {py:.2}" stroke="#eeeeee"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            x0 - 4.0,
            x0 - 6.0,
            py + 4.0,
            tick_label(yv)
        );
    }
    let _ = write!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, HEIGHT - 10.0, escape(xlabel));
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(ylabel)
    );
}

fn polyline(svg: &mut String, frame: &Frame, pts: &[(f64, f64)], attrs: &str) {
    let mut d = String::new();
    for (x, y) in pts {
        let _ = write!(d, "{:.2},{:.2} ", frame.px(*x), frame.py(*y));
    }
    let _ = write!(svg, r#"<polyline points="{}" fill="none" {attrs}/>"#, d.trim_end());
}

/// Agent states against round in raw units. Compromised agents are drawn
/// dashed in red; `reference` adds a horizontal dotted line.
pub fn states_svg(result: &RunResult, reference: Option<f64>) -> Result<String> {
    if result.trace.is_empty() {
        return Err(Error::Runtime("cannot plot an empty trace".into()));
    }
    let series = result.raw_series();
    let kmin = series[0].0 as f64;
    let kmax = series.last().expect("nonempty").0 as f64;
    let all = series.iter().flat_map(|(_, x)| x.iter().copied()).chain(reference);
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let frame = Frame::padded((kmin, kmax), (lo, hi));

    let title = result.config.name.clone().unwrap_or_else(|| "agent states".into());
    let mut svg = String::new();
    open(&mut svg, &title, &frame, "round k", "state x");
    for agent in 0..result.final_raw.len() {
        let pts: Vec<(f64, f64)> = series.iter().map(|(k, x)| (*k as f64, x[agent])).collect();
        let attacked = result.attacked.contains(&agent);
        let attrs = if attacked {
            format!(r#"class="attacked" data-agent="{agent}" stroke="{ATTACK_COLOR}" stroke-width="2" stroke-dasharray="6 4""#)
        } else {
            format!(r#"class="regular" data-agent="{agent}" stroke="{}" stroke-width="1.5""#, PALETTE[agent % PALETTE.len()])
        };
        polyline(&mut svg, &frame, &pts, &attrs);
    }
    if let Some(r) = reference {
        polyline(&mut svg, &frame, &[(kmin, r), (kmax, r)], r#"class="reference" stroke="black" stroke-dasharray="2 3""#);
    }
    legend(&mut svg, !result.attacked.is_empty(), reference.is_some());
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn legend(svg: &mut String, attacked: bool, reference: bool) {
    let mut y = MARGIN_T + 8.0;
    let x = WIDTH - MARGIN_R - 150.0;
    let mut item = |label: &str, style: &str| {
        let _ = write!(
            svg,
            r#"<path d="M{x} {y} L{} {y}" {style}/><text x="{}" y="{}">{label}</text>"#,
            x + 24.0,
            x + 30.0,
            y + 4.0
        );
        y += 16.0;
    };
    item("regular", r##"stroke="#1f77b4" stroke-width="1.5""##);
    if attacked {
        item("compromised", &format!(r#"stroke="{ATTACK_COLOR}" stroke-width="2" stroke-dasharray="6 4""#));
    }
    if reference {
        item("attack-free consensus", r#"stroke="black" stroke-dasharray="2 3""#);
    }
}

/// Reputations `c_ij` that `agent` assigns to each neighbour, against round.
pub fn reputations_svg(result: &RunResult, agent: usize) -> Result<String> {
    if result.trace.is_empty() {
        return Err(Error::Runtime("cannot plot an empty trace".into()));
    }
    let n = result.final_raw.len();
    if agent >= n {
        return Err(Error::arg(format!("agent {agent} out of range 0..{n}")));
    }
    let kmin = result.trace[0].k as f64 + 1.0;
    let kmax = result.trace.last().expect("nonempty").k as f64 + 1.0;
    let frame = Frame::padded((kmin, kmax), (0.0, 1.0));
    let mut svg = String::new();
    open(&mut svg, &format!("reputations held by agent {agent}"), &frame, "round k", "c");
    for j in (0..n).filter(|&j| j != agent) {
        let pts: Vec<(f64, f64)> = result
            .trace
            .iter()
            .filter(|r| r.c[agent][j] != 0.0)
            .map(|r| (r.k as f64 + 1.0, r.c[agent][j]))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let attrs = if result.attacked.contains(&j) {
            format!(r#"class="attacked" data-agent="{j}" stroke="{ATTACK_COLOR}" stroke-width="2" stroke-dasharray="6 4""#)
        } else {
            format!(r#"class="regular" data-agent="{j}" stroke="{}" stroke-width="1.5""#, PALETTE[j % PALETTE.len()])
        };
        polyline(&mut svg, &frame, &pts, &attrs);
    }
    legend(&mut svg, !result.attacked.is_empty(), false);
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn numeric_axis(table: &SweepTable, key: &str) -> Vec<f64> {
    let vals: BTreeSet<u64> = table
        .cells
        .iter()
        .filter_map(|c| c.overrides.get(key).and_then(Value::as_f64))
        .map(f64::to_bits)
        .collect();
    let mut v: Vec<f64> = vals.into_iter().map(f64::from_bits).collect();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean consensus error of a two-axis sweep as a colour grid.
pub fn heatmap_svg(table: &SweepTable, x_key: &str, y_key: &str) -> Result<String> {
    let xs = numeric_axis(table, x_key);
    let ys = numeric_axis(table, y_key);
    if xs.is_empty() || ys.is_empty() {
        return Err(Error::arg(format!("sweep has no numeric axes {x_key} and {y_key}")));
    }
    let emax = table.cells.iter().map(|c| c.mean_error).filter(|e| e.is_finite()).fold(0.0, f64::max);
    let frame = Frame {
        x: (-0.5, xs.len() as f64 - 0.5),
        y: (-0.5, ys.len() as f64 - 0.5),
    };
    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12"><rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">mean consensus error (max {})</text>"#,
        WIDTH / 2.0,
        tick_label(emax)
    );
    let cw = frame.px(0.5) - frame.px(-0.5);
    let ch = frame.py(-0.5) - frame.py(0.5);
    for c in &table.cells {
        let (Some(xv), Some(yv)) = (
            c.overrides.get(x_key).and_then(Value::as_f64),
            c.overrides.get(y_key).and_then(Value::as_f64),
        ) else {
            continue;
        };
        let xi = xs.iter().position(|&v| v == xv).expect("axis value") as f64;
        let yi = ys.iter().position(|&v| v == yv).expect("axis value") as f64;
        let t = if emax > 0.0 && c.mean_error.is_finite() { c.mean_error / emax } else { 0.0 };
        let shade = (255.0 * (1.0 - t)).round() as u8;
        let _ = write!(
            svg,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb(255,{shade},{shade})" data-error="{}"/>"#,
            frame.px(xi - 0.5),
            frame.py(yi + 0.5),
            cw,
            ch,
            c.mean_error
        );
    }
    let step = |len: usize| (len / 8).max(1);
    for (i, v) in xs.iter().enumerate().step_by(step(xs.len())) {
        let _ = write!(svg, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, frame.px(i as f64), HEIGHT - MARGIN_B + 16.0, tick_label(*v));
    }
    for (i, v) in ys.iter().enumerate().step_by(step(ys.len())) {
        let _ = write!(svg, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, MARGIN_L - 6.0, frame.py(i as f64) + 4.0, tick_label(*v));
    }
    let _ = write!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, WIDTH / 2.0, HEIGHT - 10.0, escape(x_key));
    let _ = write!(
        svg,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        HEIGHT / 2.0,
        escape(y_key)
    );
    svg.push_str("</svg>\n");
    Ok(svg)
}

/// Writes [`states_svg`] to `path`. Nothing is written on error.
pub fn emit_plot(result: &RunResult, reference: Option<f64>, path: &Path) -> Result<()> {
    let svg = states_svg(result, reference)?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, svg)?;
    Ok(())
}
