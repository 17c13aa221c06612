//! Append-only journal.
//!
//! One JSON object per line, tagged by `type`:
//!
//! * `header`: schema version, topology name and digest, mode, protocols and
//!   protocol configuration; always the first line
//! * `result`: one per path estimate; `{subchip, protocol, stage, path, value,
//!   stderr, shots, timestamp, seed}` plus an optional `wall_time`
//! * `conflict`: a path re-measured with a different seed
//! * `commit`: closes a transaction of result lines (`op` is `record` or `merge`)
//! * `digest`: SHA-256 of the canonical state after the commit
//!
//! A transaction is written with a single write call and flushed.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};

use super::WorkflowMode;
use crate::protocols::{ProtocolConfig, ProtocolId};
use crate::topology::{Path, Stage, SubChipKey};

pub const JOURNAL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitOp {
    Record,
    Merge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum JournalLine {
    Header {
        schema_version: u32,
        topology: String,
        topology_digest: String,
        mode: WorkflowMode,
        protocols: Vec<ProtocolId>,
        config: ProtocolConfig,
    },
    Result {
        subchip: SubChipKey,
        protocol: ProtocolId,
        stage: Stage,
        path: Path,
        value: f64,
        stderr: f64,
        shots: u64,
        timestamp: u64,
        seed: u64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        wall_time: Option<u64>,
    },
    Conflict {
        subchip: SubChipKey,
        protocol: ProtocolId,
        stage: Stage,
        path: Path,
        kept_seed: u64,
        superseded_seed: u64,
    },
    Commit {
        op: CommitOp,
        subchip: SubChipKey,
        protocol: ProtocolId,
        stage: Stage,
        threshold: f64,
        count: usize,
    },
    Digest {
        seq: u64,
        state_digest: String,
    },
}

impl JournalLine {
    pub fn kind(&self) -> &'static str {
        match self {
            JournalLine::Header { .. } => "header",
            JournalLine::Result { .. } => "result",
            JournalLine::Conflict { .. } => "conflict",
            JournalLine::Commit { .. } => "commit",
            JournalLine::Digest { .. } => "digest",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum JournalError {
    #[error("journal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt journal at line {line}: {reason}; last valid entry: {last_valid}")]
    Corrupt { line: usize, reason: String, last_valid: String },
    #[error("journal schema version {0} is not supported")]
    Version(u32),
    #[error("journal was written for topology '{journal_topology}' (digest {journal_digest}), but '{topology}' has digest {digest}")]
    TopologyMismatch { journal_topology: String, journal_digest: String, topology: String, digest: String },
    #[error("state digest mismatch at line {line}: journal has {expected}, replay gives {actual}")]
    DigestMismatch { line: usize, expected: String, actual: String },
    #[error("replay failed at line {line}: {reason}")]
    Replay { line: usize, reason: String },
}

/// Where journal lines go.
#[derive(Debug, Default)]
pub enum JournalSink {
    #[default]
    Discard,
    Memory(Vec<String>),
    File {
        path: PathBuf,
        file: File,
    },
}

impl JournalSink {
    pub fn memory() -> Self {
        JournalSink::Memory(Vec::new())
    }

    pub fn create(path: impl AsRef<FsPath>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let file = File::create(&path)?;
        Ok(JournalSink::File { path, file })
    }

    pub fn append(path: impl AsRef<FsPath>) -> Result<Self, JournalError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().append(true).open(&path)?;
        Ok(JournalSink::File { path, file })
    }

    pub fn write(&mut self, lines: &[JournalLine]) -> Result<(), JournalError> {
        let encoded: Vec<String> =
            lines.iter().map(|l| serde_json::to_string(l).expect("journal line serializes")).collect();
        match self {
            JournalSink::Discard => {}
            JournalSink::Memory(buf) => buf.extend(encoded),
            JournalSink::File { file, .. } => {
                let mut text = String::new();
                for l in &encoded {
                    text.push_str(l);
                    text.push('\n');
                }
                file.write_all(text.as_bytes())?;
                file.flush()?;
            }
        }
        Ok(())
    }

    pub fn lines(&self) -> Option<&[String]> {
        match self {
            JournalSink::Memory(buf) => Some(buf),
            _ => None,
        }
    }

    /// Whole journal text for the in-memory sink.
    pub fn text(&self) -> Option<String> {
        self.lines().map(|ls| ls.iter().map(|l| format!("{l}\n")).collect())
    }
}

/// Parses journal text. A final line without a newline counts as truncated.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, JournalLine)>, JournalError> {
    let mut out: Vec<(usize, JournalLine)> = Vec::new();
    let describe = |out: &Vec<(usize, JournalLine)>| match out.last() {
        Some((n, l)) => format!("line {n} ({})", l.kind()),
        None => "none".to_string(),
    };
    let complete = text.ends_with('\n');
    let raw: Vec<&str> = text.split('\n').collect();
    let count = if complete { raw.len() - 1 } else { raw.len() };
    for (i, line) in raw.iter().take(count).enumerate() {
        let n = i + 1;
        if line.trim().is_empty() {
            if !complete && n == count {
                break;
            }
            continue;
        }
        if !complete && n == count {
            return Err(JournalError::Corrupt {
                line: n,
                reason: "truncated final line".into(),
                last_valid: describe(&out),
            });
        }
        match serde_json::from_str::<JournalLine>(line) {
            Ok(l) => out.push((n, l)),
            Err(e) => return Err(JournalError::Corrupt { line: n, reason: e.to_string(), last_valid: describe(&out) }),
        }
    }
    Ok(out)
}
