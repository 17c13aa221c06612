//! Backends and jobs.
//!
//! `sim://default` runs batches synchronously in-process. `mock://<dir>`
//! mimics a remote provider: submission writes a job document into `<dir>`,
//! and the first poll executes the batch, cancels a deterministic fraction
//! of circuits (`?cancel=<rate>`) and records the outcome in the document.
//! A file named `OFFLINE` in the directory makes the backend unreachable.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path as FsPath, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_trajectories_with, NoiseModel, Result, ShotResult, SimError, SimOptions};
use crate::protocols::Circuit;
use crate::seeds::mix;

pub const MOCK_OFFLINE_MARKER: &str = "OFFLINE";

/// A circuit together with the seed its shots are drawn with.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub circuit: Circuit,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Done,
    Cancelled,
    Partial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendJob {
    pub job_id: String,
    pub backend: String,
    pub shots: u64,
    pub status: JobStatus,
    pub batch_hash: String,
    pub circuit_ids: Vec<String>,
    /// Aligned with the batch; `None` for circuits without results.
    pub results: Vec<Option<ShotResult>>,
}

impl BackendJob {
    pub fn completed(&self) -> impl Iterator<Item = (usize, &ShotResult)> {
        self.results.iter().enumerate().filter_map(|(i, r)| r.as_ref().map(|r| (i, r)))
    }

    pub fn cancelled(&self) -> Vec<usize> {
        match self.status {
            JobStatus::Queued | JobStatus::Running => vec![],
            _ => self.results.iter().enumerate().filter(|(_, r)| r.is_none()).map(|(i, _)| i).collect(),
        }
    }

    pub fn is_finished(&self) -> bool {
        matches!(self.status, JobStatus::Done | JobStatus::Partial | JobStatus::Cancelled)
    }
}

pub trait Backend: Send {
    fn id(&self) -> String;
    fn submit(&mut self, batch: &[BatchItem], shots: u64) -> Result<BackendJob>;
    fn poll(&mut self, job_id: &str) -> Result<BackendJob>;

    /// Submits and polls until the job is finished.
    fn run(&mut self, batch: &[BatchItem], shots: u64) -> Result<BackendJob> {
        let mut job = self.submit(batch, shots)?;
        while !job.is_finished() {
            job = self.poll(&job.job_id)?;
        }
        Ok(job)
    }
}

/// Opens `sim://default` or `mock://<dir>[?cancel=<rate>]`.
pub fn open_backend(uri: &str, noise: NoiseModel, options: SimOptions) -> Result<Box<dyn Backend>> {
    noise.validate()?;
    if let Some(rest) = uri.strip_prefix("sim://") {
        if rest.is_empty() || rest == "default" {
            return Ok(Box::new(SimBackend::new(noise, options)));
        }
        return Err(SimError::BadUri(uri.to_string()));
    }
    if let Some(rest) = uri.strip_prefix("mock://") {
        let (dir, query) = rest.split_once('?').unwrap_or((rest, ""));
        if dir.is_empty() {
            return Err(SimError::BadUri(uri.to_string()));
        }
        let mut cancel = 0.0;
        for kv in query.split('&').filter(|s| !s.is_empty()) {
            match kv.split_once('=') {
                Some(("cancel", v)) => {
                    cancel = v.parse().map_err(|_| SimError::BadUri(uri.to_string()))?;
                    if !(0.0..=1.0).contains(&cancel) {
                        return Err(SimError::BadUri(uri.to_string()));
                    }
                }
                _ => return Err(SimError::BadUri(uri.to_string())),
            }
        }
        return Ok(Box::new(MockBackend::new(dir, cancel, noise, options)?));
    }
    Err(SimError::BadUri(uri.to_string()))
}

fn batch_hash(batch: &[BatchItem], shots: u64) -> String {
    let mut h = Sha256::new();
    h.update(shots.to_le_bytes());
    for item in batch {
        let doc = serde_json::to_vec(&item.circuit.to_document()).expect("circuit serializes");
        h.update((doc.len() as u64).to_le_bytes());
        h.update(&doc);
        h.update(item.seed.to_le_bytes());
    }
    hex::encode(h.finalize())
}

fn job_id(batch_hash: &str, seq: u64) -> String {
    let mut h = Sha256::new();
    h.update(batch_hash.as_bytes());
    h.update(seq.to_le_bytes());
    format!("job-{}", &hex::encode(h.finalize())[..16])
}

fn execute(
    batch: &[BatchItem],
    shots: u64,
    noise: &NoiseModel,
    options: &SimOptions,
    backend: &str,
) -> Result<Vec<ShotResult>> {
    let run = |item: &BatchItem| {
        run_trajectories_with(&item.circuit, noise, shots, item.seed, options).map(|mut r| {
            r.backend = backend.to_string();
            r
        })
    };
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        batch.par_iter().map(run).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        batch.iter().map(run).collect()
    }
}

/// In-process simulator; jobs complete during `submit`.
pub struct SimBackend {
    noise: NoiseModel,
    options: SimOptions,
    jobs: BTreeMap<String, BackendJob>,
    seq: u64,
}

impl SimBackend {
    pub fn new(noise: NoiseModel, options: SimOptions) -> Self {
        SimBackend { noise, options, jobs: BTreeMap::new(), seq: 0 }
    }
}

impl Backend for SimBackend {
    fn id(&self) -> String {
        "sim://default".to_string()
    }

    fn submit(&mut self, batch: &[BatchItem], shots: u64) -> Result<BackendJob> {
        if batch.is_empty() {
            return Err(SimError::EmptyBatch);
        }
        let hash = batch_hash(batch, shots);
        let id = job_id(&hash, self.seq);
        self.seq += 1;
        let results = execute(batch, shots, &self.noise, &self.options, &self.id())?;
        let job = BackendJob {
            job_id: id.clone(),
            backend: self.id(),
            shots,
            status: JobStatus::Done,
            batch_hash: hash,
            circuit_ids: batch.iter().map(|b| b.circuit.id()).collect(),
            results: results.into_iter().map(Some).collect(),
        };
        self.jobs.insert(id, job.clone());
        Ok(job)
    }

    fn poll(&mut self, job_id: &str) -> Result<BackendJob> {
        self.jobs.get(job_id).cloned().ok_or_else(|| SimError::UnknownJob(job_id.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct MockCircuitEntry {
    id: String,
    seed: u64,
    counts: Option<BTreeMap<String, u64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct MockJobDocument {
    job_id: String,
    status: JobStatus,
    batch_hash: String,
    shots: u64,
    circuits: Vec<MockCircuitEntry>,
}

/// File-backed stand-in for a remote provider.
pub struct MockBackend {
    dir: PathBuf,
    cancel_rate: f64,
    noise: NoiseModel,
    options: SimOptions,
    pending: BTreeMap<String, Vec<BatchItem>>,
}

impl MockBackend {
    pub fn new(dir: impl AsRef<FsPath>, cancel_rate: f64, noise: NoiseModel, options: SimOptions) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|e| SimError::Store(format!("{}: {e}", dir.display())))?;
        Ok(MockBackend { dir, cancel_rate, noise, options, pending: BTreeMap::new() })
    }

    fn check_online(&self) -> Result<()> {
        if self.dir.join(MOCK_OFFLINE_MARKER).exists() {
            return Err(SimError::BackendUnavailable(format!("{} is offline", self.id())));
        }
        Ok(())
    }

    fn doc_path(&self, job_id: &str) -> PathBuf {
        self.dir.join(format!("{job_id}.json"))
    }

    fn write_doc(&self, doc: &MockJobDocument) -> Result<()> {
        let path = self.doc_path(&doc.job_id);
        let tmp = path.with_extension("json.tmp");
        let text = serde_json::to_string_pretty(doc).map_err(|e| SimError::Store(e.to_string()))?;
        fs::write(&tmp, text).and_then(|_| fs::rename(&tmp, &path)).map_err(|e| SimError::Store(e.to_string()))
    }

    fn read_doc(&self, job_id: &str) -> Result<MockJobDocument> {
        let path = self.doc_path(job_id);
        let text = fs::read_to_string(&path).map_err(|_| SimError::UnknownJob(job_id.to_string()))?;
        serde_json::from_str(&text).map_err(|e| SimError::Store(format!("{}: {e}", path.display())))
    }

    fn next_seq(&self) -> u64 {
        fs::read_dir(&self.dir)
            .map(|it| {
                it.filter_map(|e| e.ok()).filter(|e| e.file_name().to_string_lossy().ends_with(".json")).count() as u64
            })
            .unwrap_or(0)
    }

    fn is_cancelled(&self, job_id: &str, index: usize) -> bool {
        if self.cancel_rate <= 0.0 {
            return false;
        }
        let key = u64::from_str_radix(job_id.trim_start_matches("job-"), 16).unwrap_or(0);
        let u = (mix(key, index as u64) >> 11) as f64 / (1u64 << 53) as f64;
        u < self.cancel_rate
    }

    fn job_from_doc(&self, doc: &MockJobDocument) -> BackendJob {
        BackendJob {
            job_id: doc.job_id.clone(),
            backend: self.id(),
            shots: doc.shots,
            status: doc.status,
            batch_hash: doc.batch_hash.clone(),
            circuit_ids: doc.circuits.iter().map(|c| c.id.clone()).collect(),
            results: doc
                .circuits
                .iter()
                .map(|c| {
                    c.counts.as_ref().map(|counts| ShotResult {
                        counts: counts.clone(),
                        shots: doc.shots,
                        circuit_id: c.id.clone(),
                        seed: c.seed,
                        backend: self.id(),
                    })
                })
                .collect(),
        }
    }
}

impl Backend for MockBackend {
    fn id(&self) -> String {
        format!("mock://{}", self.dir.display())
    }

    fn submit(&mut self, batch: &[BatchItem], shots: u64) -> Result<BackendJob> {
        self.check_online()?;
        if batch.is_empty() {
            return Err(SimError::EmptyBatch);
        }
        let hash = batch_hash(batch, shots);
        let id = job_id(&hash, self.next_seq());
        let doc = MockJobDocument {
            job_id: id.clone(),
            status: JobStatus::Queued,
            batch_hash: hash,
            shots,
            circuits: batch
                .iter()
                .map(|b| MockCircuitEntry { id: b.circuit.id(), seed: b.seed, counts: None })
                .collect(),
        };
        self.write_doc(&doc)?;
        self.pending.insert(id, batch.to_vec());
        Ok(self.job_from_doc(&doc))
    }

    fn poll(&mut self, job_id: &str) -> Result<BackendJob> {
        self.check_online()?;
        let mut doc = self.read_doc(job_id)?;
        if matches!(doc.status, JobStatus::Queued | JobStatus::Running) {
            let batch = self
                .pending
                .remove(job_id)
                .ok_or_else(|| SimError::Store(format!("{job_id}: batch not held by this client")))?;
            let keep: Vec<usize> = (0..batch.len()).filter(|&i| !self.is_cancelled(job_id, i)).collect();
            let items: Vec<BatchItem> = keep.iter().map(|&i| batch[i].clone()).collect();
            let results = execute(&items, doc.shots, &self.noise, &self.options, &self.id())?;
            for (&i, r) in keep.iter().zip(results) {
                doc.circuits[i].counts = Some(r.counts);
            }
            doc.status = match keep.len() {
                0 => JobStatus::Cancelled,
                k if k == batch.len() => JobStatus::Done,
                _ => JobStatus::Partial,
            };
            self.write_doc(&doc)?;
        }
        Ok(self.job_from_doc(&doc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{build_circuit, ProtocolConfig, ProtocolId};
    use crate::topology::Path;

    fn batch(k: usize) -> Vec<BatchItem> {
        let cfg = ProtocolConfig::default();
        (0..k)
            .map(|i| {
                let v = cfg.variants(ProtocolId::Transmit)[i % 6];
                let path = Path((0..(2 + i as u32 % 4)).collect());
                BatchItem { circuit: build_circuit(ProtocolId::Transmit, &path, &v, &cfg).unwrap(), seed: i as u64 }
            })
            .collect()
    }

    #[test]
    fn sim_backend_completes_synchronously() {
        let mut b = open_backend("sim://default", NoiseModel::noiseless(), SimOptions::default()).unwrap();
        let job = b.submit(&batch(8), 64).unwrap();
        assert_eq!(job.status, JobStatus::Done);
        assert_eq!(job.completed().count(), 8);
        assert_eq!(b.poll(&job.job_id).unwrap(), job);
        assert_eq!(b.submit(&[], 64), Err(SimError::EmptyBatch));
    }

    #[test]
    fn mock_backend_partial_and_offline() {
        let dir = tempfile::tempdir().unwrap();
        let uri = format!("mock://{}?cancel=0.3333", dir.path().display());
        let mut b = open_backend(&uri, NoiseModel::noiseless(), SimOptions::default()).unwrap();
        let job = b.submit(&batch(144), 16).unwrap();
        assert_eq!(job.status, JobStatus::Queued);
        let done = b.poll(&job.job_id).unwrap();
        assert_eq!(done.status, JobStatus::Partial);
        let ok = done.completed().count();
        // Binomial(144, 2/3): mean 96, sd ~5.7.
        assert!((96 - 23..=96 + 23).contains(&ok), "{ok}");
        assert_eq!(done.cancelled().len(), 144 - ok);
        assert_eq!(b.poll(&job.job_id).unwrap(), done);

        fs::write(dir.path().join(MOCK_OFFLINE_MARKER), "").unwrap();
        assert!(matches!(b.submit(&batch(2), 16), Err(SimError::BackendUnavailable(_))));
    }

    #[test]
    fn bad_uris() {
        for uri in ["http://x", "sim://other", "mock://", "mock:///tmp/x?cancel=2"] {
            assert!(open_backend(uri, NoiseModel::noiseless(), SimOptions::default()).is_err(), "{uri}");
        }
    }
}
