//! Protocol vectors, chip scores, swap-distance series, pair counts,
//! session overlap and chart documents. Everything here reads a state
//! snapshot and never mutates it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assess::Decision;
use crate::protocols::{swap_distance, ProtocolId};
use crate::topology::{ChipTopology, Stage, SubChipKey, SubChipKind};
use crate::workflow::{AssessmentState, Ladder, LadderStatus};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReportError {
    #[error("N0 must be at least 1")]
    NoRectangles,
    #[error("no rectangle passed A-L for {0}")]
    NoPassingRectangles(ProtocolId),
    #[error("vectors come from different topologies ({a} vs {b})")]
    TopologyMismatch { a: String, b: String },
    #[error("unsupported chart format '{0}' (expected rows or svg)")]
    UnsupportedFormat(String),
    #[error("state has no recorded stages")]
    EmptyState,
}

/// Final outcome of one protocol ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// Passed A-L; carries the A-L minimum fidelity.
    Capable(f64),
    FailedAt(Stage),
    /// Never run, gated out, or still in progress.
    NotTested,
}

impl Outcome {
    pub fn of(ladder: Option<&Ladder>) -> Outcome {
        let Some(l) = ladder else { return Outcome::NotTested };
        match l.status {
            LadderStatus::Failed(stage) => Outcome::FailedAt(stage),
            LadderStatus::Passed(Stage::AllLengths) => match l.stages.get(&Stage::AllLengths) {
                Some(r) => Outcome::Capable(r.stats.min),
                None => Outcome::NotTested,
            },
            _ => Outcome::NotTested,
        }
    }

    /// Whether the ladder behind this outcome passed `stage`.
    pub fn passed(&self, stage: Stage, kind: SubChipKind) -> bool {
        match *self {
            Outcome::Capable(_) => true,
            Outcome::NotTested => false,
            Outcome::FailedAt(failed) => {
                let ladder = Stage::ladder(kind);
                let pos = |s: Stage| ladder.iter().position(|&x| x == s);
                matches!((pos(stage), pos(failed)), (Some(a), Some(b)) if a < b)
            }
        }
    }

    pub fn score_value(&self) -> f64 {
        match *self {
            Outcome::Capable(f) => f,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorEntry {
    pub subchip: SubChipKey,
    pub protocol: ProtocolId,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolVector {
    pub topology: String,
    pub topology_digest: String,
    pub protocols: Vec<ProtocolId>,
    /// Every rectangle index of the topology.
    pub rectangles: Vec<u32>,
    /// One entry per (rectangle, protocol), rectangle-major.
    pub singles: Vec<VectorEntry>,
    /// Pairs with a started ladder.
    pub pairs: Vec<VectorEntry>,
}

impl ProtocolVector {
    pub fn outcome(&self, rect: u32, protocol: ProtocolId) -> Outcome {
        self.singles
            .iter()
            .find(|e| e.protocol == protocol && e.subchip == SubChipKey::single(rect))
            .map_or(Outcome::NotTested, |e| e.outcome)
    }

    /// Rectangles that passed `stage` for `protocol`.
    pub fn pass_set(&self, protocol: ProtocolId, stage: Stage) -> BTreeSet<u32> {
        self.singles
            .iter()
            .filter(|e| e.protocol == protocol && e.outcome.passed(stage, SubChipKind::Single))
            .map(|e| e.subchip.first())
            .collect()
    }
}

pub fn protocol_vector(state: &AssessmentState, topology: &ChipTopology) -> ProtocolVector {
    let rectangles: Vec<u32> = topology.rectangles.iter().map(|r| r.index).collect();
    let mut singles = Vec::new();
    for &r in &rectangles {
        for &p in &state.protocols {
            let key = SubChipKey::single(r);
            singles.push(VectorEntry { outcome: Outcome::of(state.ladder(p, &key)), subchip: key, protocol: p });
        }
    }
    let pairs = state
        .ladders
        .iter()
        .filter(|(k, _)| k.subchip.kind() == SubChipKind::Pair)
        .map(|(k, l)| VectorEntry { subchip: k.subchip.clone(), protocol: k.protocol, outcome: Outcome::of(Some(l)) })
        .collect();
    ProtocolVector {
        topology: state.topology.clone(),
        topology_digest: state.topology_digest.clone(),
        protocols: state.protocols.clone(),
        rectangles,
        singles,
        pairs,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChipScore {
    pub protocol: ProtocolId,
    pub n0: usize,
    /// Per rectangle: A-L min fidelity, or 0.
    pub x: Vec<(u32, f64)>,
    /// Rectangles with a positive x.
    pub n: usize,
    pub avg_min: f64,
    /// Dimensionless.
    pub score: f64,
    pub not_tested: Vec<u32>,
}

/// Score = sum(x) / N0 with x = 0 for anything not capable. The yield form
/// (N / N0) * mean(x > 0) is computed as well and must agree.
pub fn chip_score(vector: &ProtocolVector, protocol: ProtocolId, n0: usize) -> Result<ChipScore, ReportError> {
    if n0 == 0 {
        return Err(ReportError::NoRectangles);
    }
    let mut x = Vec::new();
    let mut not_tested = Vec::new();
    for &r in &vector.rectangles {
        let o = vector.outcome(r, protocol);
        if o == Outcome::NotTested {
            not_tested.push(r);
        }
        x.push((r, o.score_value()));
    }
    let sum: f64 = x.iter().map(|&(_, v)| v).sum();
    let positive: Vec<f64> = x.iter().map(|&(_, v)| v).filter(|&v| v > 0.0).collect();
    let n = positive.len();
    let avg_min = if n == 0 { 0.0 } else { positive.iter().sum::<f64>() / n as f64 };
    let score = sum / n0 as f64;
    let yield_form = score_from_summary(n, avg_min, n0);
    assert!(
        (score - yield_form).abs() <= 1e-12 * score.abs().max(1.0),
        "score forms disagree: {score} vs {yield_form}"
    );
    Ok(ChipScore { protocol, n0, x, n, avg_min, score, not_tested })
}

/// Yield-ratio form from a (count, average) summary.
pub fn score_from_summary(count: usize, avg_min: f64, n0: usize) -> f64 {
    count as f64 / n0 as f64 * avg_min
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub protocol: ProtocolId,
    pub chip: String,
    #[serde(rename = "N0")]
    pub n0: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub avg_min: f64,
    pub score: f64,
    pub unit: String,
    pub not_tested: Vec<u32>,
    /// The pass threshold is a stand-in, not a published bound.
    pub provisional_threshold: bool,
}

pub fn score_table(state: &AssessmentState, vector: &ProtocolVector) -> Result<Vec<ScoreRow>, ReportError> {
    let n0 = vector.rectangles.len();
    vector
        .protocols
        .iter()
        .map(|&p| {
            let s = chip_score(vector, p, n0)?;
            Ok(ScoreRow {
                protocol: p,
                chip: vector.topology.clone(),
                n0,
                n: s.n,
                avg_min: s.avg_min,
                score: s.score,
                unit: "dimensionless".into(),
                not_tested: s.not_tested,
                provisional_threshold: provisional_threshold(state, p),
            })
        })
        .collect()
}

fn provisional_threshold(state: &AssessmentState, protocol: ProtocolId) -> bool {
    if !protocol.threshold_is_default_guess() {
        return false;
    }
    let used = state
        .ladders
        .iter()
        .filter(|(k, _)| k.protocol == protocol)
        .flat_map(|(_, l)| l.stages.values())
        .map(|r| r.threshold)
        .next();
    used.is_none_or(|t| t == protocol.default_threshold())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapPoint {
    pub distance: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub paths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwapDistanceSeries {
    pub protocol: ProtocolId,
    pub points: Vec<SwapPoint>,
}

/// Per-path A-L estimates of capable single rectangles, grouped by swap distance.
pub fn swap_distance_series(state: &AssessmentState, protocol: ProtocolId) -> Result<SwapDistanceSeries, ReportError> {
    let mut groups: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    let mut any = false;
    for (k, l) in &state.ladders {
        if k.protocol != protocol || k.subchip.kind() != SubChipKind::Single || !l.is_capable() {
            continue;
        }
        any = true;
        if let Some(r) = l.stages.get(&Stage::AllLengths) {
            for e in &r.stats.estimates {
                if let Ok(d) = swap_distance(protocol, e.path.len()) {
                    groups.entry(d).or_default().push(e.value);
                }
            }
        }
    }
    if !any {
        return Err(ReportError::NoPassingRectangles(protocol));
    }
    let points = groups
        .into_iter()
        .map(|(distance, v)| SwapPoint {
            distance,
            mean: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            paths: v.len(),
        })
        .collect();
    Ok(SwapDistanceSeries { protocol, points })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCountRow {
    pub protocol: ProtocolId,
    pub passed: usize,
    pub pairs: Vec<SubChipKey>,
    /// Pairs with an unfinished task; not counted.
    pub partial: Vec<SubChipKey>,
}

pub fn pair_count_table(state: &AssessmentState) -> Vec<PairCountRow> {
    state
        .protocols
        .iter()
        .map(|&p| {
            let pairs: Vec<SubChipKey> = state
                .ladders
                .iter()
                .filter(|(k, l)| k.protocol == p && k.subchip.kind() == SubChipKind::Pair && l.is_capable())
                .map(|(k, _)| k.subchip.clone())
                .collect();
            let partial: BTreeSet<SubChipKey> = state
                .open
                .keys()
                .filter(|k| k.protocol == p && k.subchip.kind() == SubChipKind::Pair)
                .map(|k| k.subchip.clone())
                .collect();
            PairCountRow { protocol: p, passed: pairs.len(), pairs, partial: partial.into_iter().collect() }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageOverlap {
    pub stage: Stage,
    pub a: Vec<u32>,
    pub b: Vec<u32>,
    pub both: Vec<u32>,
    pub jaccard: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub protocol: ProtocolId,
    pub stages: Vec<StageOverlap>,
}

/// Compares the single-rectangle pass sets of two sessions stage by stage.
pub fn consistency_overlap(
    a: &ProtocolVector,
    b: &ProtocolVector,
    protocol: ProtocolId,
) -> Result<OverlapReport, ReportError> {
    if a.topology_digest != b.topology_digest {
        return Err(ReportError::TopologyMismatch { a: a.topology.clone(), b: b.topology.clone() });
    }
    let stages = Stage::ALL
        .iter()
        .map(|&stage| {
            let sa = a.pass_set(protocol, stage);
            let sb = b.pass_set(protocol, stage);
            let both: Vec<u32> = sa.intersection(&sb).copied().collect();
            let union = sa.union(&sb).count();
            let jaccard = if union == 0 { 1.0 } else { both.len() as f64 / union as f64 };
            StageOverlap { stage, a: sa.into_iter().collect(), b: sb.into_iter().collect(), both, jaccard }
        })
        .collect();
    Ok(OverlapReport { protocol, stages })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChartFormat {
    Rows,
    Svg,
}

impl FromStr for ChartFormat {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rows" | "json" => Ok(ChartFormat::Rows),
            "svg" => Ok(ChartFormat::Svg),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartRow {
    pub rect: String,
    pub protocol: ProtocolId,
    pub stage: Stage,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub threshold: f64,
    pub pass: bool,
}

/// One row per recorded (sub-chip, protocol, stage).
pub fn chart_rows(state: &AssessmentState) -> Vec<ChartRow> {
    let mut rows = Vec::new();
    for (k, l) in &state.ladders {
        for (stage, r) in &l.stages {
            rows.push(ChartRow {
                rect: k.subchip.to_string(),
                protocol: k.protocol,
                stage: *stage,
                mean: r.stats.mean,
                min: r.stats.min,
                max: r.stats.max,
                threshold: r.threshold,
                pass: r.decision == Decision::Pass,
            });
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChartDocument {
    pub name: String,
    pub content: String,
}

/// Per-rectangle bar charts and swap-distance charts.
pub fn emit_charts(state: &AssessmentState, format: ChartFormat) -> Result<Vec<ChartDocument>, ReportError> {
    let rows = chart_rows(state);
    if rows.is_empty() {
        return Err(ReportError::EmptyState);
    }
    let series: Vec<SwapDistanceSeries> =
        state.protocols.iter().filter_map(|&p| swap_distance_series(state, p).ok()).collect();
    match format {
        ChartFormat::Rows => Ok(vec![
            ChartDocument { name: "chart_rows.json".into(), content: to_json(&rows) },
            ChartDocument { name: "swapdist_rows.json".into(), content: to_json(&series) },
        ]),
        ChartFormat::Svg => {
            let mut groups: BTreeMap<(ProtocolId, &'static str, Stage), Vec<&ChartRow>> = BTreeMap::new();
            for r in &rows {
                let kind = if r.rect.contains('+') { "pairs" } else { "single" };
                groups.entry((r.protocol, kind, r.stage)).or_default().push(r);
            }
            let mut docs: Vec<ChartDocument> = groups
                .into_iter()
                .map(|((p, kind, stage), rs)| ChartDocument {
                    name: format!("rect_{}_{}_{}.svg", p.as_str(), kind, stage.as_str()),
                    content: bar_chart_svg(&format!("{} {} {}", p.as_str(), kind, stage.as_str()), &rs),
                })
                .collect();
            docs.extend(series.iter().map(|s| ChartDocument {
                name: format!("swapdist_{}.svg", s.protocol.as_str()),
                content: swap_chart_svg(s),
            }));
            Ok(docs)
        }
    }
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report documents serialize");
    s.push('\n');
    s
}

const PLOT_H: f64 = 200.0;
const TOP: f64 = 30.0;
const LEFT: f64 = 50.0;

fn y_of(v: f64) -> f64 {
    TOP + PLOT_H * (1.0 - v.clamp(0.0, 1.0))
}

fn svg_frame(out: &mut String, width: f64, title: &str) {
    let height = TOP + PLOT_H + 50.0;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"#
    );
    let _ = writeln!(out, r#"<text x="{LEFT}" y="18" font-family="sans-serif" font-size="13">{title}</text>"#);
    for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let y = y_of(tick);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="8" y="{:.2}" font-family="sans-serif" font-size="10">{tick:.2}</text>"##,
            width - 10.0,
            y + 3.0
        );
    }
}

fn bar_chart_svg(title: &str, rows: &[&ChartRow]) -> String {
    let step = 34.0;
    let width = LEFT + step * rows.len() as f64 + 20.0;
    let mut out = String::new();
    svg_frame(&mut out, width, title);
    for (i, r) in rows.iter().enumerate() {
        let x = LEFT + 6.0 + step * i as f64;
        let fill = if r.pass { "#4a7ebb" } else { "#c0504d" };
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="22" height="{:.2}" fill="{fill}"/>"#,
            y_of(r.mean),
            y_of(0.0) - y_of(r.mean)
        );
        let cx = x + 11.0;
        let _ = writeln!(
            out,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            y_of(r.max),
            y_of(r.min)
        );
        for v in [r.min, r.max] {
            let _ = writeln!(
                out,
                r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
                cx - 5.0,
                y_of(v),
                cx + 5.0,
                y_of(v)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="9">{}</text>"#,
            y_of(0.0) + 14.0,
            r.rect
        );
    }
    if let Some(r) = rows.first() {
        let y = y_of(r.threshold);
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#2a2" stroke-dasharray="6,3"/>"##,
            width - 10.0
        );
    }
    out.push_str("</svg>\n");
    out
}

fn swap_chart_svg(s: &SwapDistanceSeries) -> String {
    let step = 50.0;
    let width = LEFT + step * s.points.len().max(1) as f64 + 20.0;
    let mut out = String::new();
    svg_frame(&mut out, width, &format!("{} fidelity vs swap distance", s.protocol.as_str()));
    let xs: Vec<f64> = (0..s.points.len()).map(|i| LEFT + 25.0 + step * i as f64).collect();
    let pts: Vec<String> = s.points.iter().zip(&xs).map(|(p, x)| format!("{x:.2},{:.2}", y_of(p.mean))).collect();
    let _ = writeln!(out, r##"<polyline points="{}" fill="none" stroke="#4a7ebb"/>"##, pts.join(" "));
    for (p, &x) in s.points.iter().zip(&xs) {
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><circle cx="{x:.2}" cy="{:.2}" r="3"/>"#,
            y_of(p.max),
            y_of(p.min),
            y_of(p.mean)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="10">{}</text>"#,
            x - 3.0,
            y_of(0.0) + 14.0,
            p.distance
        );
    }
    out.push_str("</svg>\n");
    out
}
