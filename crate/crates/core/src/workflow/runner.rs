//! Plan/execute/record loop against a backend.

use std::collections::BTreeMap;

use super::{RecordOutcome, TaskKey, Workflow, WorkflowError};
use crate::assess::{aggregate, estimate_fidelity, AssessError, FidelityEstimate};
use crate::protocols::{ProtocolError, TemplateRegistry, Variant};
use crate::seeds::{derive, mix, DEFAULT_SEED};
use crate::simengine::{Backend, BatchItem, ShotResult, SimError, DEFAULT_SHOTS};
use crate::topology::Path;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("backend: {0}")]
    Backend(#[from] SimError),
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Assess(#[from] AssessError),
}

/// Seeds for paths that are measured again.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RerunSeeding {
    /// A new seed per attempt.
    Fresh,
    /// The seed of the first attempt.
    Identical,
}

#[derive(Debug, Clone)]
pub struct RunSettings {
    pub shots: u64,
    pub seed: u64,
    /// Maximum number of circuits submitted in this run.
    pub budget: Option<u64>,
    /// Submissions per task in this run before it is left open.
    pub max_attempts: u32,
    pub rerun: RerunSeeding,
    pub templates: TemplateRegistry,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            shots: DEFAULT_SHOTS,
            seed: DEFAULT_SEED,
            budget: None,
            max_attempts: 1,
            rerun: RerunSeeding::Fresh,
            templates: TemplateRegistry::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub circuits: u64,
    pub jobs: u64,
    pub completed_tasks: u64,
    pub budget_exhausted: bool,
    /// Runnable tasks left when the run stopped, with their missing path counts.
    pub remaining: Vec<(TaskKey, usize)>,
}

impl RunSummary {
    pub fn is_fixpoint(&self) -> bool {
        self.remaining.is_empty()
    }
}

/// Seed of one path measurement.
pub fn path_seed(global: u64, key: &TaskKey, path: &Path, attempt: u32, rerun: RerunSeeding) -> u64 {
    let base =
        derive(global, &[&key.subchip.to_string(), key.protocol.as_str(), key.stage.as_str(), &path.to_string()]);
    match (rerun, attempt) {
        (RerunSeeding::Identical, _) | (_, 0) => base,
        (RerunSeeding::Fresh, a) => mix(base, a as u64),
    }
}

/// Seed of one variant circuit of a path.
pub fn circuit_seed(path_seed: u64, variant: &Variant) -> u64 {
    mix(path_seed, variant.index as u64)
}

struct Slot {
    task: usize,
    path: Path,
    variant: Variant,
    seed: u64,
}

/// Runs tasks until nothing is runnable, the budget is spent, or every
/// runnable task has used its attempts.
pub fn run(wf: &mut Workflow, backend: &mut dyn Backend, settings: &RunSettings) -> Result<RunSummary, RunError> {
    let mut summary = RunSummary::default();
    let mut attempts: BTreeMap<TaskKey, u32> = BTreeMap::new();
    let config = wf.config().clone();
    loop {
        let tasks: Vec<_> = wf
            .plan()
            .into_iter()
            .filter(|t| attempts.get(&t.key).copied().unwrap_or(0) < settings.max_attempts)
            .collect();
        if tasks.is_empty() {
            break;
        }

        let mut batch = Vec::new();
        let mut slots = Vec::new();
        let mut included = 0;
        for (ti, task) in tasks.iter().enumerate() {
            let variants = config.variants(task.key.protocol);
            let cost = (task.missing.len() * variants.len()) as u64;
            if let Some(budget) = settings.budget {
                if summary.circuits + batch.len() as u64 + cost > budget {
                    summary.budget_exhausted = true;
                    break;
                }
            }
            let attempt = wf.state().open.get(&task.key).map_or(0, |o| o.commits);
            for path in &task.missing {
                let seed = path_seed(settings.seed, &task.key, path, attempt, settings.rerun);
                for v in &variants {
                    let circuit = settings.templates.build_circuit(task.key.protocol, path, v, &config)?;
                    batch.push(BatchItem { circuit, seed: circuit_seed(seed, v) });
                    slots.push(Slot { task: ti, path: path.clone(), variant: *v, seed });
                }
            }
            included = ti + 1;
        }
        if included == 0 {
            break;
        }

        let job = backend.run(&batch, settings.shots)?;
        summary.circuits += batch.len() as u64;
        summary.jobs += 1;

        type PathResults = BTreeMap<Path, (u64, BTreeMap<Variant, ShotResult>)>;
        let mut grouped: BTreeMap<usize, PathResults> = BTreeMap::new();
        for (slot, result) in slots.into_iter().zip(job.results) {
            let entry =
                grouped.entry(slot.task).or_default().entry(slot.path).or_insert_with(|| (slot.seed, BTreeMap::new()));
            if let Some(r) = result {
                entry.1.insert(slot.variant, r);
            }
        }

        for (ti, task) in tasks.iter().enumerate().take(included) {
            *attempts.entry(task.key.clone()).or_insert(0) += 1;
            let n_variants = config.variants(task.key.protocol).len();
            let mut estimates: Vec<FidelityEstimate> = Vec::new();
            for (path, (seed, results)) in grouped.remove(&ti).unwrap_or_default() {
                if results.len() == n_variants {
                    estimates.push(estimate_fidelity(task.key.protocol, &path, &config, &results, seed)?);
                }
            }
            if estimates.is_empty() {
                continue;
            }
            let outcome = if wf.state().open.contains_key(&task.key) {
                wf.merge(&task.key, &estimates)?
            } else {
                let stats = aggregate(&task.key.subchip, task.key.protocol, task.key.stage, &estimates)?;
                wf.record(&task.key, &stats, task.threshold)?
            };
            if matches!(outcome, RecordOutcome::Completed { .. }) {
                summary.completed_tasks += 1;
            }
        }
        if summary.budget_exhausted {
            break;
        }
    }
    wf.checkpoint()?;
    summary.remaining = wf.plan().into_iter().map(|t| (t.key, t.missing.len())).collect();
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocols::{ProtocolConfig, ProtocolId};
    use crate::simengine::{NoiseModel, SimBackend, SimOptions};
    use crate::topology::{ChipTopology, Stage, SubChipKey};
    use crate::workflow::{JournalSink, WorkflowMode};

    #[test]
    fn noiseless_transmit_run_reaches_fixpoint() {
        let mut wf = Workflow::new(
            ChipTopology::eagle(),
            &[ProtocolId::Transmit],
            WorkflowMode::Independent,
            ProtocolConfig::default(),
        )
        .unwrap()
        .with_journal(JournalSink::memory())
        .unwrap();
        let mut backend = SimBackend::new(NoiseModel::noiseless(), SimOptions::default());
        let settings = RunSettings { shots: 32, ..Default::default() };
        let s = run(&mut wf, &mut backend, &settings).unwrap();
        assert!(s.is_fixpoint());
        let st = wf.state();
        for r in 1..=18 {
            assert!(st.ladder(ProtocolId::Transmit, &SubChipKey::single(r)).unwrap().is_capable());
        }
        let pairs = wf.topology().rect_adjacency.len();
        let capable_pairs = st.ladders.iter().filter(|(k, l)| k.subchip.0.len() == 2 && l.is_capable()).count();
        assert_eq!(capable_pairs, pairs);

        let back = Workflow::resume(ChipTopology::eagle(), &wf.journal().text().unwrap()).unwrap();
        assert_eq!(back.state().digest(), st.digest());
    }

    #[test]
    fn budget_stops_cleanly() {
        let mut wf =
            Workflow::new(ChipTopology::eagle(), &ProtocolId::ALL, WorkflowMode::Strict, ProtocolConfig::default())
                .unwrap();
        let mut backend = SimBackend::new(NoiseModel::noiseless(), SimOptions::default());
        // Five do_nothing c2c tasks: 5 x 8 paths x 6 variants.
        let settings = RunSettings { shots: 8, budget: Some(5 * 48 + 10), ..Default::default() };
        let s = run(&mut wf, &mut backend, &settings).unwrap();
        assert!(s.budget_exhausted);
        assert_eq!(s.circuits, 240);
        assert_eq!(s.remaining.len(), 13);
        assert!(s.remaining.iter().all(|(k, _)| k.stage == Stage::CornerToCorner));
    }
}
