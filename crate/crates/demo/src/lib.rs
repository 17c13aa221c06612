//! Browser demo over `qpb-core`.
//!
//! Every export takes plain values and returns a JSON string. Failures come
//! back as `{"error": "..."}` so the page never has to catch exceptions.
//!
//! * [`explore_paths`]: draw a chip, a sub-chip and one of its stage paths.
//! * [`decay_curve`]: exact protocol fidelity against path length under noise.
//! * [`score_chip`]: the chip score of a list of per-rectangle minimum fidelities.

use std::fmt::Write as _;

use serde_json::{json, Value};
use wasm_bindgen::prelude::wasm_bindgen;

use qpb_core::protocols::{build_circuit, swap_distance, ProtocolConfig, ProtocolId};
use qpb_core::report::score_from_summary;
use qpb_core::simengine::{run_density_matrix, NoiseModel};
use qpb_core::topology::{enumerate_paths, make_subchip, ChipTopology, Path, Stage};

/// Longest path the decay curve simulates.
pub const MAX_CURVE_LEN: usize = 10;

const CELL: i32 = 14;
const PAD: i32 = 10;

fn reply(r: Result<Value, String>) -> String {
    match r {
        Ok(v) => v.to_string(),
        Err(e) => json!({ "error": e }).to_string(),
    }
}

fn parse_rects(text: &str) -> Result<Vec<u32>, String> {
    let rects: Vec<u32> = text
        .split([',', ' ', '+'])
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| format!("bad rectangle index {s:?}")))
        .collect::<Result<_, _>>()?;
    match rects.len() {
        1 | 2 => Ok(rects),
        _ => Err("give one rectangle or two adjacent ones".into()),
    }
}

/// Paths of one stage on a rectangle or pair, plus an SVG of the chip with the
/// sub-chip shaded and path `highlight` (wrapped modulo the count) drawn on top.
///
/// Returns `{topology, subchip, stage, count, index, path, swap_distance, svg}`.
#[wasm_bindgen]
pub fn explore_paths(topology: &str, rects: &str, stage: &str, protocol: &str, highlight: u32) -> String {
    reply(explore(topology, rects, stage, protocol, highlight))
}

fn explore(topology: &str, rects: &str, stage: &str, protocol: &str, highlight: u32) -> Result<Value, String> {
    let topo = ChipTopology::resolve(topology).map_err(|e| e.to_string())?;
    let stage: Stage = stage.parse().map_err(|e| format!("{e}"))?;
    let protocol: ProtocolId = protocol.parse().map_err(|e| format!("{e}"))?;
    let rects = parse_rects(rects)?;
    let sc = make_subchip(&topo, &rects).map_err(|e| e.to_string())?;
    let min_len = ProtocolConfig::default().min_path_len(protocol);
    let set = enumerate_paths(&sc, stage, min_len, true).map_err(|e| e.to_string())?;
    let chosen = if set.is_empty() { None } else { Some(&set.paths[highlight as usize % set.len()]) };
    let swaps = chosen.and_then(|p| swap_distance(protocol, p.len()).ok());
    Ok(json!({
        "topology": topo.name,
        "subchip": sc.key.to_string(),
        "stage": stage.as_str(),
        "count": set.len(),
        "index": chosen.map(|_| highlight as usize % set.len()),
        "path": chosen.map(|p| p.to_string()),
        "swap_distance": swaps,
        "svg": chip_svg(&topo, sc.qubit_ids(), chosen),
    }))
}

/// SVG of the chip. Qubits in `shade` are filled; `path` is drawn as a polyline.
pub fn chip_svg(topo: &ChipTopology, shade: &[u32], path: Option<&Path>) -> String {
    let layout: Vec<[i32; 2]> = match &topo.layout {
        Some(l) => l.clone(),
        // Fallback: a plain grid, enough to see which qubits are involved.
        None => (0..topo.qubit_count as i32).map(|i| [i % 16, i / 16]).collect(),
    };
    let at = |q: u32| {
        let [x, y] = layout[q as usize];
        (PAD + x * CELL, PAD + y * CELL)
    };
    let w = layout.iter().map(|p| p[0]).max().unwrap_or(0) * CELL + 2 * PAD;
    let h = layout.iter().map(|p| p[1]).max().unwrap_or(0) * CELL + 2 * PAD;

    let mut s = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {w} {h}" width="{w}" height="{h}">"#);
    s.push_str(r##"<g stroke="#bbb" stroke-width="2">"##);
    for &(a, b) in &topo.edges {
        let ((x1, y1), (x2, y2)) = (at(a), at(b));
        let _ = write!(s, r#"<line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}"/>"#);
    }
    s.push_str("</g>");
    if let Some(p) = path {
        let pts: Vec<String> = p
            .qubits()
            .iter()
            .map(|&q| {
                let (x, y) = at(q);
                format!("{x},{y}")
            })
            .collect();
        let _ = write!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#d33" stroke-width="4" stroke-linejoin="round"/>"##,
            pts.join(" ")
        );
    }
    for q in 0..topo.qubit_count {
        let (x, y) = at(q);
        let fill = if path.is_some_and(|p| p.first() == q || p.last() == q) {
            "#d33"
        } else if shade.contains(&q) {
            "#2a6fdb"
        } else {
            "#ddd"
        };
        let _ = write!(s, r#"<circle cx="{x}" cy="{y}" r="4" fill="{fill}"><title>q{q}</title></circle>"#);
    }
    s.push_str("</svg>");
    s
}

/// Exact fidelity of `protocol` on straight paths of every admissible length
/// up to `max_len`, from the density-matrix oracle.
///
/// Returns `{protocol, threshold, points: [{n, swap_distance, fidelity, closed_form}]}`.
/// `closed_form` is only filled for transmit under pure two-qubit noise.
#[wasm_bindgen]
pub fn decay_curve(protocol: &str, p1: f64, p2: f64, readout: f64, max_len: u32) -> String {
    reply(curve(protocol, p1, p2, readout, max_len as usize))
}

fn curve(protocol: &str, p1: f64, p2: f64, readout: f64, max_len: usize) -> Result<Value, String> {
    let protocol: ProtocolId = protocol.parse().map_err(|e| format!("{e}"))?;
    let noise = NoiseModel { p1, p2, readout_eps: readout, idle_damping: None };
    noise.validate().map_err(|e| e.to_string())?;
    let config = ProtocolConfig::default();
    let lo = config.min_path_len(protocol);
    let hi = max_len.min(MAX_CURVE_LEN);
    let mut points = Vec::new();
    for n in lo..=hi {
        let f = oracle_fidelity(protocol, n, &noise, &config)?;
        let d = swap_distance(protocol, n).map_err(|e| e.to_string())?;
        let closed = (protocol == ProtocolId::Transmit && p1 == 0.0 && readout == 0.0)
            .then(|| (1.0 + NoiseModel::contraction_2q(p2).powi(d as i32)) / 2.0);
        points.push(json!({ "n": n, "swap_distance": d, "fidelity": f, "closed_form": closed }));
    }
    Ok(json!({ "protocol": protocol.as_str(), "threshold": config.threshold(protocol), "points": points }))
}

/// Noise-exact protocol fidelity on the path `0-1-..-(n-1)`.
pub fn oracle_fidelity(
    protocol: ProtocolId,
    n: usize,
    noise: &NoiseModel,
    config: &ProtocolConfig,
) -> Result<f64, String> {
    let path = Path((0..n as u32).collect());
    let rates = config
        .variants(protocol)
        .iter()
        .map(|v| {
            let c = build_circuit(protocol, &path, v, config).map_err(|e| e.to_string())?;
            let d = run_density_matrix(&c, noise).map_err(|e| e.to_string())?;
            Ok(d.probability_where(|b| c.is_success(b)))
        })
        .collect::<Result<Vec<f64>, String>>()?;
    let f = match protocol {
        ProtocolId::EntanglementSwapping => (rates.iter().sum::<f64>() - 1.0) / 2.0,
        _ => rates.iter().sum::<f64>() / rates.len() as f64,
    };
    Ok(f.clamp(0.0, 1.0))
}

/// Chip score from per-rectangle minimum fidelities.
///
/// `mins` is a comma or whitespace separated list; a `-` or `x` marks a
/// rectangle that never reached capability. Rectangles below `threshold`
/// count as not capable. `n0` is the chip's rectangle count (0 means the
/// list length).
///
/// Returns `{n0, capable, avg_min, score, per_rect}`.
#[wasm_bindgen]
pub fn score_chip(mins: &str, threshold: f64, n0: u32) -> String {
    reply(score(mins, threshold, n0 as usize))
}

fn score(mins: &str, threshold: f64, n0: usize) -> Result<Value, String> {
    let values: Vec<Option<f64>> = mins
        .split([',', ' ', '\n', '\t'])
        .filter(|s| !s.is_empty())
        .map(|s| match s {
            "-" | "x" => Ok(None),
            _ => s.parse::<f64>().map(Some).map_err(|_| format!("bad fidelity {s:?}")),
        })
        .collect::<Result<_, _>>()?;
    if values.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
        return Err("fidelities must lie in [0, 1]".into());
    }
    let n0 = if n0 == 0 { values.len() } else { n0 };
    if n0 == 0 {
        return Err("no rectangles".into());
    }
    if values.len() > n0 {
        return Err(format!("{} values for {n0} rectangles", values.len()));
    }
    let capable: Vec<f64> = values.iter().flatten().copied().filter(|&v| v >= threshold).collect();
    let avg = if capable.is_empty() { 0.0 } else { capable.iter().sum::<f64>() / capable.len() as f64 };
    let per_rect: Vec<Value> = values
        .iter()
        .map(|v| match v {
            Some(f) if *f >= threshold => json!(f),
            _ => Value::Null,
        })
        .collect();
    Ok(json!({
        "n0": n0,
        "capable": capable.len(),
        "avg_min": avg,
        "score": score_from_summary(capable.len(), avg, n0),
        "per_rect": per_rect,
    }))
}
