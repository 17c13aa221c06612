//! Command implementations behind the `qpb` binary. Argument parsing lives in
//! the binary; everything here takes plain values and returns text or files.
//!
//! Files written by `run` under the output directory:
//!
//! | file | content |
//! |------|---------|
//! | `journal.jsonl` | append-only journal, the source of truth for `--resume` and `report` |
//! | `vector.json` | protocol vector |
//! | `scores.json` | score table rows |
//! | `pairs.json` | successful pair counts |
//! | `swapdist.json` | swap-distance series per protocol |
//! | `summary.json` | circuits, jobs and open tasks of this invocation |
//! | `charts/*.json`, `charts/*.svg` | chart rows and SVG charts |

use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde_json::json;

use crate::protocols::{ProtocolConfig, ProtocolError, ProtocolId, TeleportCorrection, TemplateRegistry};
use crate::report::{self, ChartFormat, ProtocolVector, ReportError};
use crate::seeds::{parse_seed, seed_from_env, DEFAULT_SEED, SEED_ENV};
use crate::simengine::{open_backend, NoiseModel, SimError, SimOptions, DEFAULT_SHOTS};
use crate::topology::{enumerate_paths, make_subchip, ChipTopology, Path, Stage, SubChipKey, TopologyError};
use crate::workflow::journal::parse_lines;
use crate::workflow::{
    run, JournalError, JournalLine, JournalSink, RerunSeeding, RunError, RunSettings, RunSummary, Workflow,
    WorkflowError, WorkflowMode,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_BACKEND: i32 = 3;
pub const EXIT_JOURNAL: i32 = 4;

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("backend: {0}")]
    Backend(SimError),
    #[error(transparent)]
    Journal(JournalError),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Backend(_) => EXIT_BACKEND,
            CliError::Journal(_) => EXIT_JOURNAL,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadUri(_) | SimError::InvalidNoise(_) => CliError::Config(e.to_string()),
            e => CliError::Backend(e),
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        match e {
            ReportError::TopologyMismatch { .. } => {
                CliError::Journal(JournalError::Replay { line: 0, reason: e.to_string() })
            }
            e => CliError::Config(e.to_string()),
        }
    }
}

impl From<WorkflowError> for CliError {
    fn from(e: WorkflowError) -> Self {
        match e {
            WorkflowError::Journal(j) => CliError::Journal(j),
            WorkflowError::StrictWithoutDoNothing
            | WorkflowError::NoProtocols
            | WorkflowError::BadThreshold(_)
            | WorkflowError::Topology(_) => CliError::Config(e.to_string()),
            e => CliError::Other(e.to_string()),
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Backend(b) => b.into(),
            RunError::Workflow(w) => w.into(),
            RunError::Protocol(p) => p.into(),
            RunError::Assess(a) => CliError::Other(a.to_string()),
        }
    }
}

fn io_err(path: &FsPath, e: std::io::Error) -> CliError {
    CliError::Other(format!("{}: {e}", path.display()))
}

/// `--seed` wins over `QPB_SEED`, which wins over the built-in default.
pub fn resolve_seed(flag: Option<&str>) -> Result<u64, CliError> {
    if let Some(raw) = flag {
        return parse_seed(raw).ok_or_else(|| CliError::Config(format!("bad seed '{raw}'")));
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        return seed_from_env().ok_or_else(|| CliError::Config(format!("bad {SEED_ENV} value '{raw}'")));
    }
    Ok(DEFAULT_SEED)
}

/// Parses `protocol=value`.
pub fn parse_threshold(raw: &str) -> Result<(ProtocolId, f64), CliError> {
    let (p, v) =
        raw.split_once('=').ok_or_else(|| CliError::Config(format!("expected protocol=value, got '{raw}'")))?;
    let protocol: ProtocolId = p.trim().parse().map_err(|e: ProtocolError| CliError::Config(e.to_string()))?;
    let value: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("bad threshold value '{v}'")))?;
    if !(0.0..=1.0).contains(&value) {
        return Err(CliError::Config(format!("threshold {value} is outside [0, 1]")));
    }
    Ok((protocol, value))
}

/// Parses a comma separated protocol list; `all` selects every protocol.
pub fn parse_protocols(raw: &str) -> Result<Vec<ProtocolId>, CliError> {
    if raw.trim() == "all" {
        return Ok(ProtocolId::ALL.to_vec());
    }
    raw.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse().map_err(|e: ProtocolError| CliError::Config(e.to_string())))
        .collect()
}

/// Parses `0-1-2` or `0,1,2`.
pub fn parse_path(raw: &str) -> Result<Path, CliError> {
    raw.split(['-', ','])
        .map(|q| q.trim().parse().map_err(|_| CliError::Config(format!("bad path '{raw}'"))))
        .collect::<Result<Vec<_>, _>>()
        .map(Path)
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    /// `eagle`, `heron` or a topology file.
    pub topology: String,
    pub backend: String,
    pub shots: u64,
    pub seed: u64,
    pub noise: NoiseModel,
    pub mode: WorkflowMode,
    pub protocols: Vec<ProtocolId>,
    pub thresholds: Vec<(ProtocolId, f64)>,
    /// Base protocol options; thresholds are applied on top.
    pub protocol_config: ProtocolConfig,
    pub templates: Option<PathBuf>,
    pub out: PathBuf,
    pub resume: bool,
    pub budget: Option<u64>,
    pub max_attempts: u32,
    pub rerun: RerunSeeding,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            topology: "heron".into(),
            backend: "sim://default".into(),
            shots: DEFAULT_SHOTS,
            seed: DEFAULT_SEED,
            noise: NoiseModel::noiseless(),
            mode: WorkflowMode::Strict,
            protocols: ProtocolId::ALL.to_vec(),
            thresholds: Vec::new(),
            protocol_config: ProtocolConfig::default(),
            templates: None,
            out: PathBuf::from("qpb-out"),
            resume: false,
            budget: None,
            max_attempts: 1,
            rerun: RerunSeeding::Fresh,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.shots == 0 {
            return Err(CliError::Config("shots must be at least 1".into()));
        }
        if self.max_attempts == 0 {
            return Err(CliError::Config("max attempts must be at least 1".into()));
        }
        self.noise.validate().map_err(|e| CliError::Config(e.to_string()))?;
        if self.protocols.is_empty() {
            return Err(CliError::Config("no protocols selected".into()));
        }
        if let Some(t) = &self.templates {
            if !t.is_file() {
                return Err(CliError::Config(format!("template file {} does not exist", t.display())));
            }
        }
        Ok(())
    }

    fn protocol_config(&self) -> Result<ProtocolConfig, CliError> {
        let mut c = self.protocol_config.clone();
        for &(p, v) in &self.thresholds {
            c = c.with_threshold(p, v)?;
        }
        Ok(c)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub summary: RunSummary,
    pub files: Vec<PathBuf>,
}

/// Runs the workflow to a fixpoint or the budget and writes every report.
/// A backend failure leaves the journal intact for `--resume`.
pub fn cmd_run(cfg: &RunConfig) -> Result<RunOutcome, CliError> {
    cfg.validate()?;
    let topology = ChipTopology::resolve(&cfg.topology)?;
    let templates = match &cfg.templates {
        Some(p) => TemplateRegistry::with_overrides(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => TemplateRegistry::new(),
    };
    let mut backend = open_backend(&cfg.backend, cfg.noise, SimOptions::default())?;

    fs::create_dir_all(&cfg.out).map_err(|e| io_err(&cfg.out, e))?;
    let journal_path = cfg.out.join(JOURNAL_FILE);
    let mut wf = if cfg.resume {
        let text = fs::read_to_string(&journal_path).map_err(|e| CliError::Journal(JournalError::Io(e)))?;
        Workflow::resume(topology, &text)?
            .continue_journal(JournalSink::append(&journal_path).map_err(CliError::Journal)?)
    } else {
        if journal_path.exists() {
            return Err(CliError::Config(format!(
                "{} already exists; pass --resume to continue it",
                journal_path.display()
            )));
        }
        Workflow::new(topology, &cfg.protocols, cfg.mode, cfg.protocol_config()?)?
            .with_journal(JournalSink::create(&journal_path).map_err(CliError::Journal)?)?
    };

    let settings = RunSettings {
        shots: cfg.shots,
        seed: cfg.seed,
        budget: cfg.budget,
        max_attempts: cfg.max_attempts,
        rerun: cfg.rerun,
        templates,
    };
    let summary = match run(&mut wf, backend.as_mut(), &settings) {
        Ok(s) => s,
        Err(e) => {
            let _ = wf.checkpoint();
            return Err(e.into());
        }
    };

    let mut files = write_reports(&cfg.out, &wf)?;
    let summary_doc = json!({
        "circuits": summary.circuits,
        "jobs": summary.jobs,
        "completed_tasks": summary.completed_tasks,
        "budget_exhausted": summary.budget_exhausted,
        "fixpoint": summary.is_fixpoint(),
        "open_tasks": summary.remaining.iter().map(|(k, missing)| json!({"task": k.to_string(), "missing_paths": missing})).collect::<Vec<_>>(),
    });
    files.push(write_file(&cfg.out.join("summary.json"), &report::to_json(&summary_doc))?);
    Ok(RunOutcome { summary, files })
}

fn write_file(path: &FsPath, content: &str) -> Result<PathBuf, CliError> {
    fs::write(path, content).map_err(|e| io_err(path, e))?;
    Ok(path.to_path_buf())
}

/// Writes vector, scores, pairs, swap-distance and chart files.
pub fn write_reports(out: &FsPath, wf: &Workflow) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for kind in [ReportKind::Vector, ReportKind::Scores, ReportKind::Pairs, ReportKind::Swapdist] {
        let text = render(kind, Some(wf))?;
        files.push(write_file(&out.join(format!("{}.json", kind.as_str())), &text)?);
    }
    let charts = out.join("charts");
    fs::create_dir_all(&charts).map_err(|e| io_err(&charts, e))?;
    for format in [ChartFormat::Rows, ChartFormat::Svg] {
        match report::emit_charts(wf.state(), format) {
            Ok(docs) => {
                for d in docs {
                    files.push(write_file(&charts.join(&d.name), &d.content)?);
                }
            }
            Err(ReportError::EmptyState) => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportKind {
    Vector,
    Scores,
    Swapdist,
    Pairs,
    Overlap,
    Charts,
}

impl ReportKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ReportKind::Vector => "vector",
            ReportKind::Scores => "scores",
            ReportKind::Swapdist => "swapdist",
            ReportKind::Pairs => "pairs",
            ReportKind::Overlap => "overlap",
            ReportKind::Charts => "charts",
        }
    }
}

impl std::str::FromStr for ReportKind {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "vector" => ReportKind::Vector,
            "scores" => ReportKind::Scores,
            "swapdist" => ReportKind::Swapdist,
            "pairs" => ReportKind::Pairs,
            "overlap" => ReportKind::Overlap,
            "charts" => ReportKind::Charts,
            _ => {
                return Err(CliError::Config(format!(
                    "unknown report kind '{s}' (expected vector, scores, swapdist, pairs, overlap or charts)"
                )))
            }
        })
    }
}

/// Replays a journal file. An empty file yields `None`. Without `topology`
/// the header's topology name is resolved against the bundled chips.
pub fn load_journal(path: &FsPath, topology: Option<&str>) -> Result<Option<Workflow>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Journal(JournalError::Io(e)))?;
    if text.trim().is_empty() {
        return Ok(None);
    }
    let topo = match topology {
        Some(t) => ChipTopology::resolve(t)?,
        None => {
            let lines = parse_lines(&text).map_err(CliError::Journal)?;
            match lines.first() {
                Some((_, JournalLine::Header { topology, .. })) => ChipTopology::resolve(topology)?,
                _ => {
                    return Err(CliError::Journal(JournalError::Corrupt {
                        line: 1,
                        reason: "missing header".into(),
                        last_valid: "none".into(),
                    }))
                }
            }
        }
    };
    Ok(Some(Workflow::resume(topo, &text)?))
}

fn empty_vector() -> ProtocolVector {
    ProtocolVector {
        topology: String::new(),
        topology_digest: String::new(),
        protocols: vec![],
        rectangles: vec![],
        singles: vec![],
        pairs: vec![],
    }
}

/// Renders one single-journal report as JSON.
pub fn render(kind: ReportKind, wf: Option<&Workflow>) -> Result<String, CliError> {
    let vector = wf.map_or_else(empty_vector, |w| report::protocol_vector(w.state(), w.topology()));
    Ok(match kind {
        ReportKind::Vector => report::to_json(&vector),
        ReportKind::Scores => match wf {
            Some(w) => report::to_json(&report::score_table(w.state(), &vector)?),
            None => report::to_json(&Vec::<report::ScoreRow>::new()),
        },
        ReportKind::Pairs => report::to_json(&wf.map(|w| report::pair_count_table(w.state())).unwrap_or_default()),
        ReportKind::Swapdist => {
            let rows: Vec<serde_json::Value> = wf
                .map(|w| {
                    w.state()
                        .protocols
                        .iter()
                        .map(|&p| match report::swap_distance_series(w.state(), p) {
                            Ok(s) => serde_json::to_value(s).expect("series serializes"),
                            Err(e) => json!({"protocol": p, "points": [], "note": e.to_string()}),
                        })
                        .collect()
                })
                .unwrap_or_default();
            report::to_json(&rows)
        }
        ReportKind::Overlap | ReportKind::Charts => {
            return Err(CliError::Config(format!("report {} is not a single-journal JSON report", kind.as_str())))
        }
    })
}

#[derive(Debug, Clone)]
pub struct ReportRequest {
    pub kind: ReportKind,
    pub journals: Vec<PathBuf>,
    pub topology: Option<String>,
    /// Protocol compared by `overlap`.
    pub protocol: ProtocolId,
    pub format: ChartFormat,
    /// Directory for `charts`.
    pub out: Option<PathBuf>,
}

/// Returns the text to print.
pub fn cmd_report(req: &ReportRequest) -> Result<String, CliError> {
    let need = if req.kind == ReportKind::Overlap { 2 } else { 1 };
    if req.journals.len() != need {
        return Err(CliError::Config(format!(
            "report {} takes {need} journal(s), got {}",
            req.kind.as_str(),
            req.journals.len()
        )));
    }
    let topo = req.topology.as_deref();
    match req.kind {
        ReportKind::Overlap => {
            let load = |p: &PathBuf| -> Result<ProtocolVector, CliError> {
                Ok(load_journal(p, topo)?
                    .map_or_else(empty_vector, |w| report::protocol_vector(w.state(), w.topology())))
            };
            let a = load(&req.journals[0])?;
            let b = load(&req.journals[1])?;
            Ok(report::to_json(&report::consistency_overlap(&a, &b, req.protocol)?))
        }
        ReportKind::Charts => {
            let out = req.out.as_ref().ok_or_else(|| CliError::Config("report charts needs --out".into()))?;
            let Some(wf) = load_journal(&req.journals[0], topo)? else {
                return Err(ReportError::EmptyState.into());
            };
            fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
            let mut names = Vec::new();
            for d in report::emit_charts(wf.state(), req.format)? {
                write_file(&out.join(&d.name), &d.content)?;
                names.push(d.name);
            }
            Ok(names.join("\n") + "\n")
        }
        kind => render(kind, load_journal(&req.journals[0], topo)?.as_ref()),
    }
}

/// Path listing for one sub-chip and stage, ending with the count line.
pub fn cmd_paths(
    topology: &str,
    rects: &str,
    stage: Stage,
    protocol: ProtocolId,
    allow_zero_swap: bool,
    list: bool,
) -> Result<String, CliError> {
    let topo = ChipTopology::resolve(topology)?;
    let key: SubChipKey = rects.parse()?;
    let subchip = make_subchip(&topo, &key.0)?;
    let min_len = crate::protocols::min_path_len_with(protocol, allow_zero_swap);
    let set = enumerate_paths(&subchip, stage, min_len, true)?;
    let mut out = String::new();
    if list {
        for p in &set.paths {
            out.push_str(&format!("{p}\n"));
        }
    }
    out.push_str(&format!("{} paths\n", set.len()));
    Ok(out)
}

/// JSON circuit document for one protocol, path and variant label.
pub fn cmd_export_circuit(
    protocol: ProtocolId,
    path: &str,
    variant: &str,
    correction: TeleportCorrection,
    templates: Option<&FsPath>,
) -> Result<String, CliError> {
    let config = ProtocolConfig { teleport_correction: correction, ..ProtocolConfig::default() };
    let variants = config.variants(protocol);
    let Some(v) = variants.iter().find(|v| v.to_string() == variant) else {
        let labels: Vec<String> = variants.iter().map(|v| v.to_string()).collect();
        return Err(CliError::Config(format!("unknown {protocol} variant '{variant}'; known: {}", labels.join(", "))));
    };
    let registry = match templates {
        Some(p) => TemplateRegistry::with_overrides(&fs::read_to_string(p).map_err(|e| io_err(p, e))?)?,
        None => TemplateRegistry::new(),
    };
    let circuit = registry.build_circuit(protocol, &parse_path(path)?, v, &config)?;
    Ok(report::to_json(&circuit.to_document()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn path_counts() {
        let t = |rects: &str, stage| cmd_paths("eagle", rects, stage, ProtocolId::Transmit, true, false).unwrap();
        assert_eq!(t("1", Stage::AllLengths), "144 paths\n");
        assert_eq!(t("1", Stage::CornerToCorner), "8 paths\n");
        assert_eq!(t("1,5", Stage::CornerToCorner), "6 paths\n");
        assert!(matches!(
            cmd_paths("eagle", "1,5", Stage::MaxLengths, ProtocolId::Transmit, true, false),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn parsers() {
        assert_eq!(parse_threshold("transmit=0.7").unwrap(), (ProtocolId::Transmit, 0.7));
        assert!(parse_threshold("transmit=1.5").is_err());
        assert!(parse_threshold("transmit").is_err());
        assert_eq!(parse_protocols("all").unwrap().len(), 6);
        assert_eq!(parse_path("3-4-5").unwrap(), Path(vec![3, 4, 5]));
        assert_eq!(resolve_seed(Some("0x10")).unwrap(), 16);
        assert!(resolve_seed(Some("zz")).is_err());
        assert_eq!("charts".parse::<ReportKind>().unwrap(), ReportKind::Charts);
        assert_eq!("bogus".parse::<ReportKind>().unwrap_err().exit_code(), EXIT_CONFIG);
    }

    #[test]
    fn export_round_trip() {
        let text =
            cmd_export_circuit(ProtocolId::Teleportation, "0-1-2-3", "+x", TeleportCorrection::FeedForward, None)
                .unwrap();
        let doc: crate::protocols::CircuitDocument = serde_json::from_str(&text).unwrap();
        let c = crate::protocols::Circuit::from_document(doc).unwrap();
        assert_eq!(c.qubits, vec![0, 1, 2, 3]);
        assert!(cmd_export_circuit(ProtocolId::Transmit, "0-1", "nope", TeleportCorrection::PauliFrame, None).is_err());
    }
}
