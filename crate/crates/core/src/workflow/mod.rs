//! The lookup workflow: which (sub-chip, protocol, stage) runs next, how
//! results advance the stage ladders, and how partial runs are merged and
//! replayed from the journal.
//!
//! Ladders are `c2c -> M-L -> A-L` for single rectangles and `c2c -> A-L`
//! for pairs. A ladder advances only on a pass; a fail is terminal.
//!
//! In strict mode the first phase runs only do_nothing c2c on every
//! rectangle. Afterwards do_nothing and transmit ladders run on every
//! rectangle, while other protocols run only on rectangles that passed
//! do_nothing c2c. Independent mode drops the do_nothing gate entirely.
//! Pair ladders start once both rectangles are capable (passed A-L) for
//! the protocol and are neighbours.

pub mod journal;
mod runner;

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::assess::{aggregate, decide, AssessError, Decision, FidelityEstimate, RectStats};
use crate::protocols::{ProtocolConfig, ProtocolId};
use crate::topology::{
    enumerate_paths, make_subchip, ChipTopology, Path, PathSet, Stage, SubChip, SubChipKey, SubChipKind,
};

pub use journal::{CommitOp, JournalError, JournalLine, JournalSink, JOURNAL_SCHEMA_VERSION};
pub use runner::{circuit_seed, path_seed, run, RerunSeeding, RunError, RunSettings, RunSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkflowMode {
    Strict,
    Independent,
}

impl std::str::FromStr for WorkflowMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "strict" => Ok(WorkflowMode::Strict),
            "independent" => Ok(WorkflowMode::Independent),
            _ => Err(format!("unknown workflow mode '{s}' (expected strict or independent)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum WorkflowError {
    #[error("strict mode needs do_nothing in the protocol set")]
    StrictWithoutDoNothing,
    #[error("no protocols selected")]
    NoProtocols,
    #[error("task {0} is not runnable in the current state")]
    Unplanned(TaskKey),
    #[error("stats for {found} recorded against task {task}")]
    Mismatch { task: TaskKey, found: TaskKey },
    #[error("path {path} is not part of the {task} path set")]
    PathNotInTask { task: TaskKey, path: Path },
    #[error("path {path} lies outside sub-chip {subchip}")]
    PathOutsideSubChip { subchip: SubChipKey, path: Path },
    #[error("threshold {0} is outside [0, 1]")]
    BadThreshold(f64),
    #[error(transparent)]
    Assess(#[from] AssessError),
    #[error(transparent)]
    Topology(#[from] crate::topology::TopologyError),
    #[error(transparent)]
    Journal(#[from] JournalError),
}

pub type Result<T> = std::result::Result<T, WorkflowError>;

/// Commits between digest lines unless configured otherwise.
pub const DEFAULT_DIGEST_EVERY: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskKey {
    pub protocol: ProtocolId,
    pub subchip: SubChipKey,
    pub stage: Stage,
}

impl fmt::Display for TaskKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.protocol, self.subchip, self.stage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LadderKey {
    pub protocol: ProtocolId,
    pub subchip: SubChipKey,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LadderStatus {
    NotStarted,
    Passed(Stage),
    Failed(Stage),
}

/// One measurement of a path, with its logical timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub estimate: FidelityEstimate,
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stats: RectStats,
    pub threshold: f64,
    pub decision: Decision,
    /// Every measurement per path, oldest first; the newest feeds `stats`.
    #[serde(with = "map_as_vec")]
    pub entries: BTreeMap<Path, Vec<PathEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    pub status: LadderStatus,
    pub stages: BTreeMap<Stage, StageRecord>,
}

impl Default for Ladder {
    fn default() -> Self {
        Ladder { status: LadderStatus::NotStarted, stages: BTreeMap::new() }
    }
}

impl Ladder {
    pub fn is_capable(&self) -> bool {
        self.status == LadderStatus::Passed(Stage::AllLengths)
    }

    pub fn passed(&self, stage: Stage) -> bool {
        self.stages.get(&stage).is_some_and(|r| r.decision == Decision::Pass)
    }
}

/// A task that received results for only part of its path set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpenTask {
    #[serde(with = "map_as_vec")]
    pub entries: BTreeMap<Path, Vec<PathEntry>>,
    /// Number of commits into this task so far.
    pub commits: u32,
}

/// Maps with non-string keys serialize as `[[key, value], ...]`.
mod map_as_vec {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<K: Serialize, V: Serialize, S: Serializer>(m: &BTreeMap<K, V>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(m.iter())
    }

    pub fn deserialize<'de, K, V, D>(d: D) -> Result<BTreeMap<K, V>, D::Error>
    where
        K: Deserialize<'de> + Ord,
        V: Deserialize<'de>,
        D: Deserializer<'de>,
    {
        Vec::<(K, V)>::deserialize(d).map(|v| v.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conflict {
    pub task: TaskKey,
    pub path: Path,
    pub kept_seed: u64,
    pub superseded_seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssessmentState {
    pub topology: String,
    pub topology_digest: String,
    pub mode: WorkflowMode,
    pub protocols: Vec<ProtocolId>,
    pub ladders: BTreeMap<LadderKey, Ladder>,
    pub open: BTreeMap<TaskKey, OpenTask>,
    pub conflicts: Vec<Conflict>,
    pub clock: u64,
}

#[derive(Serialize)]
struct StateDoc<'a> {
    topology: &'a str,
    topology_digest: &'a str,
    mode: WorkflowMode,
    protocols: &'a [ProtocolId],
    ladders: Vec<(&'a LadderKey, &'a Ladder)>,
    open: Vec<(&'a TaskKey, &'a OpenTask)>,
    conflicts: &'a [Conflict],
    clock: u64,
}

impl AssessmentState {
    pub fn ladder(&self, protocol: ProtocolId, subchip: &SubChipKey) -> Option<&Ladder> {
        self.ladders.get(&LadderKey { protocol, subchip: subchip.clone() })
    }

    /// Canonical JSON used for the state digest.
    pub fn canonical_json(&self) -> String {
        let doc = StateDoc {
            topology: &self.topology,
            topology_digest: &self.topology_digest,
            mode: self.mode,
            protocols: &self.protocols,
            ladders: self.ladders.iter().collect(),
            open: self.open.iter().collect(),
            conflicts: &self.conflicts,
            clock: self.clock,
        };
        serde_json::to_string(&doc).expect("state serializes")
    }

    /// Hex SHA-256 of [`Self::canonical_json`].
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }
}

#[derive(Debug, Clone)]
pub struct Task {
    pub key: TaskKey,
    pub paths: Arc<PathSet>,
    /// Paths still without a result (all of them for a fresh task).
    pub missing: Vec<Path>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RecordOutcome {
    Completed { decision: Decision, stats: RectStats },
    Partial { missing: Vec<Path> },
    Unchanged,
}

pub struct Workflow {
    topology: ChipTopology,
    config: ProtocolConfig,
    state: AssessmentState,
    subchips: BTreeMap<SubChipKey, SubChip>,
    pathsets: RefCell<BTreeMap<(SubChipKey, Stage, usize), Arc<PathSet>>>,
    journal: JournalSink,
    wall_clock: bool,
    seq: u64,
    digest_every: u32,
    undigested: u32,
}

impl Workflow {
    pub fn new(
        topology: ChipTopology,
        protocols: &[ProtocolId],
        mode: WorkflowMode,
        config: ProtocolConfig,
    ) -> Result<Self> {
        let protocols: Vec<ProtocolId> = protocols.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        if protocols.is_empty() {
            return Err(WorkflowError::NoProtocols);
        }
        if mode == WorkflowMode::Strict && !protocols.contains(&ProtocolId::DoNothing) {
            return Err(WorkflowError::StrictWithoutDoNothing);
        }
        for (&p, &t) in &config.thresholds {
            crate::protocols::threshold(p, &config.thresholds).map_err(|_| WorkflowError::BadThreshold(t))?;
        }
        let mut subchips = BTreeMap::new();
        for r in &topology.rectangles {
            let sc = make_subchip(&topology, &[r.index])?;
            subchips.insert(sc.key.clone(), sc);
        }
        for &(a, b) in &topology.rect_adjacency {
            let sc = make_subchip(&topology, &[a, b])?;
            subchips.insert(sc.key.clone(), sc);
        }
        let state = AssessmentState {
            topology: topology.name.clone(),
            topology_digest: topology.digest().to_string(),
            mode,
            protocols,
            ladders: BTreeMap::new(),
            open: BTreeMap::new(),
            conflicts: Vec::new(),
            clock: 0,
        };
        Ok(Workflow {
            topology,
            config,
            state,
            subchips,
            pathsets: RefCell::new(BTreeMap::new()),
            journal: JournalSink::Discard,
            wall_clock: false,
            seq: 0,
            digest_every: DEFAULT_DIGEST_EVERY,
            undigested: 0,
        })
    }

    /// Attaches a journal sink and writes the header.
    pub fn with_journal(mut self, sink: JournalSink) -> Result<Self> {
        self.journal = sink;
        let header = self.header();
        self.journal.write(&[header])?;
        Ok(self)
    }

    /// Continues an existing journal (after [`Workflow::resume`]) without a new header.
    pub fn continue_journal(mut self, sink: JournalSink) -> Self {
        self.journal = sink;
        self
    }

    /// Commits between two digest lines.
    pub fn with_digest_every(mut self, commits: u32) -> Self {
        self.digest_every = commits.max(1);
        self
    }

    /// Also stamp result lines with wall-clock seconds.
    pub fn with_wall_clock(mut self, on: bool) -> Self {
        self.wall_clock = on;
        self
    }

    fn header(&self) -> JournalLine {
        JournalLine::Header {
            schema_version: JOURNAL_SCHEMA_VERSION,
            topology: self.state.topology.clone(),
            topology_digest: self.state.topology_digest.clone(),
            mode: self.state.mode,
            protocols: self.state.protocols.clone(),
            config: self.config.clone(),
        }
    }

    pub fn topology(&self) -> &ChipTopology {
        &self.topology
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn state(&self) -> &AssessmentState {
        &self.state
    }

    pub fn journal(&self) -> &JournalSink {
        &self.journal
    }

    pub fn subchip(&self, key: &SubChipKey) -> Option<&SubChip> {
        self.subchips.get(key)
    }

    pub fn singles(&self) -> impl Iterator<Item = &SubChipKey> {
        self.subchips.keys().filter(|k| k.kind() == SubChipKind::Single)
    }

    pub fn pairs(&self) -> impl Iterator<Item = &SubChipKey> {
        self.subchips.keys().filter(|k| k.kind() == SubChipKind::Pair)
    }

    /// Path set of a stage, memoized.
    pub fn path_set(&self, protocol: ProtocolId, subchip: &SubChipKey, stage: Stage) -> Result<Arc<PathSet>> {
        let min_len = self.config.min_path_len(protocol);
        let key = (subchip.clone(), stage, min_len);
        if let Some(ps) = self.pathsets.borrow().get(&key) {
            return Ok(ps.clone());
        }
        let sc = self
            .subchips
            .get(subchip)
            .ok_or_else(|| crate::topology::TopologyError::UnknownRectangle(subchip.first()))?;
        let ps = Arc::new(enumerate_paths(sc, stage, min_len, true)?);
        self.pathsets.borrow_mut().insert(key, ps.clone());
        Ok(ps)
    }

    fn next_stage(&self, protocol: ProtocolId, subchip: &SubChipKey) -> Option<Stage> {
        let ladder = Stage::ladder(subchip.kind());
        match self.state.ladder(protocol, subchip).map(|l| l.status) {
            None | Some(LadderStatus::NotStarted) => Some(ladder[0]),
            Some(LadderStatus::Passed(s)) => {
                let i = ladder.iter().position(|&x| x == s)?;
                ladder.get(i + 1).copied()
            }
            Some(LadderStatus::Failed(_)) => None,
        }
    }

    fn gate_phase_done(&self) -> bool {
        self.singles().all(|k| {
            self.state.ladder(ProtocolId::DoNothing, k).is_some_and(|l| l.stages.contains_key(&Stage::CornerToCorner))
        })
    }

    fn single_eligible(&self, protocol: ProtocolId, key: &SubChipKey, phase_done: bool) -> bool {
        if self.state.mode == WorkflowMode::Independent {
            return true;
        }
        if !phase_done {
            return protocol == ProtocolId::DoNothing;
        }
        match protocol {
            ProtocolId::DoNothing | ProtocolId::Transmit => true,
            _ => self.state.ladder(ProtocolId::DoNothing, key).is_some_and(|l| l.passed(Stage::CornerToCorner)),
        }
    }

    fn pair_eligible(&self, protocol: ProtocolId, key: &SubChipKey, phase_done: bool) -> bool {
        if self.state.mode == WorkflowMode::Strict && !phase_done {
            return false;
        }
        let (a, b) = (key.0[0], key.0[1]);
        self.topology.are_adjacent(a, b)
            && [a, b]
                .iter()
                .all(|&r| self.state.ladder(protocol, &SubChipKey::single(r)).is_some_and(Ladder::is_capable))
    }

    fn phase_done(&self) -> bool {
        self.state.mode == WorkflowMode::Independent || self.gate_phase_done()
    }

    fn task_for(&self, protocol: ProtocolId, key: &SubChipKey, phase_done: bool) -> Option<Task> {
        let eligible = match key.kind() {
            SubChipKind::Single => self.single_eligible(protocol, key, phase_done),
            SubChipKind::Pair => self.pair_eligible(protocol, key, phase_done),
        };
        if !eligible {
            return None;
        }
        let stage = self.next_stage(protocol, key)?;
        if !phase_done && stage != Stage::CornerToCorner {
            return None;
        }
        let paths = self.path_set(protocol, key, stage).ok()?;
        if paths.is_empty() {
            return None;
        }
        let task_key = TaskKey { protocol, subchip: key.clone(), stage };
        let missing = match self.state.open.get(&task_key) {
            Some(open) => paths.paths.iter().filter(|p| !open.entries.contains_key(*p)).cloned().collect(),
            None => paths.paths.clone(),
        };
        Some(Task { key: task_key, paths, missing, threshold: self.config.threshold(protocol) })
    }

    /// Runnable tasks, ordered by (protocol, sub-chip, stage).
    pub fn plan(&self) -> Vec<Task> {
        let phase_done = self.phase_done();
        let mut out: Vec<Task> = self
            .state
            .protocols
            .iter()
            .flat_map(|&p| self.subchips.keys().filter_map(move |k| self.task_for(p, k, phase_done)))
            .collect();
        out.sort_by(|a, b| a.key.cmp(&b.key));
        out
    }

    fn planned(&self, key: &TaskKey) -> Result<Task> {
        if !self.state.protocols.contains(&key.protocol) || !self.subchips.contains_key(&key.subchip) {
            return Err(WorkflowError::Unplanned(key.clone()));
        }
        self.task_for(key.protocol, &key.subchip, self.phase_done())
            .filter(|t| &t.key == key)
            .ok_or_else(|| WorkflowError::Unplanned(key.clone()))
    }

    /// Records stats for a planned task. Stats covering only part of the
    /// path set leave the task open.
    pub fn record(&mut self, task: &TaskKey, stats: &RectStats, threshold: f64) -> Result<RecordOutcome> {
        let found = TaskKey { protocol: stats.protocol, subchip: stats.subchip.clone(), stage: stats.stage };
        if &found != task {
            return Err(WorkflowError::Mismatch { task: task.clone(), found });
        }
        self.apply(task, &stats.estimates, threshold, CommitOp::Record, true)
    }

    /// Adds rerun results to an open (or still planned) task.
    pub fn merge(&mut self, task: &TaskKey, estimates: &[FidelityEstimate]) -> Result<RecordOutcome> {
        if estimates.is_empty() {
            return Ok(RecordOutcome::Unchanged);
        }
        let sc = self.subchips.get(&task.subchip).ok_or_else(|| WorkflowError::Unplanned(task.clone()))?;
        if let Some(e) = estimates.iter().find(|e| !sc.contains_path(&e.path)) {
            return Err(WorkflowError::PathOutsideSubChip { subchip: task.subchip.clone(), path: e.path.clone() });
        }
        let threshold = self.config.threshold(task.protocol);
        self.apply(task, estimates, threshold, CommitOp::Merge, true)
    }

    fn apply(
        &mut self,
        key: &TaskKey,
        estimates: &[FidelityEstimate],
        threshold: f64,
        op: CommitOp,
        journal: bool,
    ) -> Result<RecordOutcome> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(WorkflowError::BadThreshold(threshold));
        }
        let task = self.planned(key)?;
        for e in estimates {
            if e.protocol != key.protocol {
                return Err(WorkflowError::Mismatch {
                    task: key.clone(),
                    found: TaskKey { protocol: e.protocol, ..key.clone() },
                });
            }
            if task.paths.paths.binary_search(&e.path).is_err() {
                return Err(WorkflowError::PathNotInTask { task: key.clone(), path: e.path.clone() });
            }
        }
        if estimates.is_empty() {
            return Ok(RecordOutcome::Unchanged);
        }

        self.state.clock += 1;
        let timestamp = self.state.clock;
        let wall_time = self.wall_clock.then(|| {
            std::time::SystemTime::now().duration_since(std::time::UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
        });
        let mut lines = Vec::with_capacity(estimates.len() + 2);
        let open = self.state.open.entry(key.clone()).or_default();
        open.commits += 1;
        for e in estimates {
            let slot = open.entries.entry(e.path.clone()).or_default();
            if let Some(prev) = slot.last() {
                if prev.estimate.seed != e.seed {
                    let c = Conflict {
                        task: key.clone(),
                        path: e.path.clone(),
                        kept_seed: e.seed,
                        superseded_seed: prev.estimate.seed,
                    };
                    lines.push(JournalLine::Conflict {
                        subchip: key.subchip.clone(),
                        protocol: key.protocol,
                        stage: key.stage,
                        path: e.path.clone(),
                        kept_seed: c.kept_seed,
                        superseded_seed: c.superseded_seed,
                    });
                    self.state.conflicts.push(c);
                }
            }
            slot.push(PathEntry { estimate: e.clone(), timestamp });
            lines.push(JournalLine::Result {
                subchip: key.subchip.clone(),
                protocol: key.protocol,
                stage: key.stage,
                path: e.path.clone(),
                value: e.value,
                stderr: e.stderr,
                shots: e.shots_used,
                timestamp,
                seed: e.seed,
                wall_time,
            });
        }
        lines.push(JournalLine::Commit {
            op,
            subchip: key.subchip.clone(),
            protocol: key.protocol,
            stage: key.stage,
            threshold,
            count: estimates.len(),
        });

        let open = &self.state.open[key];
        let missing: Vec<Path> = task.paths.paths.iter().filter(|p| !open.entries.contains_key(*p)).cloned().collect();
        let outcome = if missing.is_empty() {
            let open = self.state.open.remove(key).expect("open task");
            let newest: Vec<FidelityEstimate> =
                open.entries.values().map(|v| v.last().expect("non-empty").estimate.clone()).collect();
            let stats = aggregate(&key.subchip, key.protocol, key.stage, &newest)?;
            let decision = decide(stats.min, threshold);
            let ladder = self
                .state
                .ladders
                .entry(LadderKey { protocol: key.protocol, subchip: key.subchip.clone() })
                .or_default();
            ladder.status = match decision {
                Decision::Pass => LadderStatus::Passed(key.stage),
                Decision::Fail => LadderStatus::Failed(key.stage),
            };
            ladder
                .stages
                .insert(key.stage, StageRecord { stats: stats.clone(), threshold, decision, entries: open.entries });
            RecordOutcome::Completed { decision, stats }
        } else {
            RecordOutcome::Partial { missing }
        };

        if journal {
            self.undigested += 1;
            if self.undigested >= self.digest_every {
                lines.push(self.digest_line());
            }
            self.journal.write(&lines)?;
        }
        Ok(outcome)
    }

    fn digest_line(&mut self) -> JournalLine {
        self.seq += 1;
        self.undigested = 0;
        JournalLine::Digest { seq: self.seq, state_digest: self.state.digest() }
    }

    /// Writes a digest line if any commit happened since the last one.
    pub fn checkpoint(&mut self) -> Result<()> {
        if self.undigested > 0 {
            let line = self.digest_line();
            self.journal.write(&[line])?;
        }
        Ok(())
    }

    /// Rebuilds a workflow from journal text; the topology must match the header.
    pub fn resume(topology: ChipTopology, text: &str) -> Result<Self> {
        let lines = journal::parse_lines(text)?;
        let Some((_, JournalLine::Header { schema_version, topology: name, topology_digest, mode, protocols, config })) =
            lines.first().cloned()
        else {
            return Err(
                JournalError::Corrupt { line: 1, reason: "missing header".into(), last_valid: "none".into() }.into()
            );
        };
        if schema_version != JOURNAL_SCHEMA_VERSION {
            return Err(JournalError::Version(schema_version).into());
        }
        if topology_digest != topology.digest() {
            return Err(JournalError::TopologyMismatch {
                journal_topology: name,
                journal_digest: topology_digest,
                topology: topology.name.clone(),
                digest: topology.digest().to_string(),
            }
            .into());
        }
        let mut wf = Workflow::new(topology, &protocols, mode, config)?;
        let mut pending: Vec<(usize, FidelityEstimate)> = Vec::new();
        let mut last_valid = "line 1 (header)".to_string();
        for (n, line) in lines.into_iter().skip(1) {
            match line {
                JournalLine::Header { .. } => {
                    return Err(JournalError::Corrupt { line: n, reason: "second header".into(), last_valid }.into())
                }
                JournalLine::Result { path, value, stderr, shots, seed, protocol, .. } => {
                    pending.push((n, FidelityEstimate { value, stderr, shots_used: shots, path, protocol, seed }));
                }
                JournalLine::Conflict { .. } => {}
                JournalLine::Commit { op, subchip, protocol, stage, threshold, count } => {
                    if count != pending.len() {
                        return Err(JournalError::Corrupt {
                            line: n,
                            reason: format!("commit covers {count} results, found {}", pending.len()),
                            last_valid,
                        }
                        .into());
                    }
                    let key = TaskKey { protocol, subchip, stage };
                    let estimates: Vec<FidelityEstimate> = pending.drain(..).map(|(_, e)| e).collect();
                    wf.apply(&key, &estimates, threshold, op, false)
                        .map_err(|e| JournalError::Replay { line: n, reason: e.to_string() })?;
                    wf.undigested += 1;
                }
                JournalLine::Digest { seq, state_digest } => {
                    let actual = wf.state.digest();
                    if actual != state_digest {
                        return Err(JournalError::DigestMismatch { line: n, expected: state_digest, actual }.into());
                    }
                    wf.seq = seq;
                    wf.undigested = 0;
                }
            }
            last_valid = format!("line {n}");
        }
        if let Some((n, _)) = pending.first() {
            return Err(JournalError::Corrupt {
                line: *n,
                reason: "results without a commit".into(),
                last_valid: format!("line {}", n - 1),
            }
            .into());
        }
        Ok(wf)
    }

    /// Checks the structural invariants of the current state.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let strict = self.state.mode == WorkflowMode::Strict;
        for (key, ladder) in &self.state.ladders {
            let order = Stage::ladder(key.subchip.kind());
            if key.subchip.kind() == SubChipKind::Pair && ladder.stages.contains_key(&Stage::MaxLengths) {
                return Err(format!("M-L result on pair {}", key.subchip));
            }
            let mut prior_passed = true;
            let mut last = None;
            for &s in order {
                match ladder.stages.get(&s) {
                    Some(r) => {
                        if !prior_passed {
                            return Err(format!(
                                "{} {} has {s} without passing the previous stage",
                                key.protocol, key.subchip
                            ));
                        }
                        prior_passed = r.decision == Decision::Pass;
                        last = Some((s, r.decision));
                    }
                    None => prior_passed = false,
                }
            }
            let expected = match last {
                None => LadderStatus::NotStarted,
                Some((s, Decision::Pass)) => LadderStatus::Passed(s),
                Some((s, Decision::Fail)) => LadderStatus::Failed(s),
            };
            if ladder.status != expected {
                return Err(format!(
                    "{} {} status {:?} disagrees with its stages",
                    key.protocol, key.subchip, ladder.status
                ));
            }
            for r in ladder.stages.values() {
                if (r.decision == Decision::Pass) != (r.stats.min >= r.threshold) {
                    return Err(format!("{} {} decision disagrees with threshold", key.protocol, key.subchip));
                }
            }
            let touched = !ladder.stages.is_empty();
            match key.subchip.kind() {
                SubChipKind::Pair if touched => {
                    let (a, b) = (key.subchip.0[0], key.subchip.0[1]);
                    if !self.topology.are_adjacent(a, b) {
                        return Err(format!("pair {} is not adjacent", key.subchip));
                    }
                    for r in [a, b] {
                        if !self.state.ladder(key.protocol, &SubChipKey::single(r)).is_some_and(Ladder::is_capable) {
                            return Err(format!("pair {} ran before R{r} passed {} A-L", key.subchip, key.protocol));
                        }
                    }
                }
                SubChipKind::Single if touched && strict => {
                    let gated = !matches!(key.protocol, ProtocolId::DoNothing | ProtocolId::Transmit);
                    let gate_ok = self
                        .state
                        .ladder(ProtocolId::DoNothing, &key.subchip)
                        .is_some_and(|l| l.passed(Stage::CornerToCorner));
                    if gated && !gate_ok {
                        return Err(format!("{} ran on {} without passing do_nothing c2c", key.protocol, key.subchip));
                    }
                }
                _ => {}
            }
        }
        for key in self.state.open.keys() {
            if key.subchip.kind() == SubChipKind::Pair && key.stage == Stage::MaxLengths {
                return Err(format!("open M-L task on pair {}", key.subchip));
            }
        }
        Ok(())
    }
}
