use std::collections::BTreeMap;

use qpb_core::assess::{aggregate, estimate_fidelity, FidelityEstimate};
use qpb_core::protocols::{build_circuit, ProtocolConfig, ProtocolId};
use qpb_core::simengine::{run_density_matrix, run_trajectories, NoiseModel};
use qpb_core::topology::{ChipTopology, Path, Stage, SubChipKey};
use qpb_core::workflow::{
    JournalError, JournalSink, RecordOutcome, Task, TaskKey, Workflow, WorkflowError, WorkflowMode,
};

fn est(protocol: ProtocolId, path: &Path, value: f64, seed: u64) -> FidelityEstimate {
    FidelityEstimate { value, stderr: 0.0, shots_used: 60, path: path.clone(), protocol, seed }
}

fn transmit_eagle() -> Workflow {
    Workflow::new(ChipTopology::eagle(), &[ProtocolId::Transmit], WorkflowMode::Independent, ProtocolConfig::default())
        .unwrap()
        .with_journal(JournalSink::memory())
        .unwrap()
}

fn task(wf: &Workflow, subchip: &SubChipKey) -> Task {
    wf.plan().into_iter().find(|t| &t.key.subchip == subchip).expect("task planned")
}

fn pass(wf: &mut Workflow, subchip: &SubChipKey) -> RecordOutcome {
    let t = task(wf, subchip);
    let ests: Vec<_> = t.paths.paths.iter().map(|p| est(t.key.protocol, p, 0.9, 1)).collect();
    let stats = aggregate(&t.key.subchip, t.key.protocol, t.key.stage, &ests).unwrap();
    wf.record(&t.key, &stats, t.threshold).unwrap()
}

fn advance_to_al(wf: &mut Workflow, rect: u32) -> Task {
    let key = SubChipKey::single(rect);
    pass(wf, &key);
    pass(wf, &key);
    let t = task(wf, &key);
    assert_eq!(t.key.stage, Stage::AllLengths);
    t
}

#[test]
fn adjacent_capable_rectangles_unlock_their_pair() {
    let mut wf = transmit_eagle();
    assert!(wf.topology().are_adjacent(7, 8));
    for r in [7, 8] {
        let key = SubChipKey::single(r);
        for _ in 0..3 {
            pass(&mut wf, &key);
        }
        assert!(wf.state().ladder(ProtocolId::Transmit, &key).unwrap().is_capable());
    }
    let pair = SubChipKey::pair(7, 8);
    let t = task(&wf, &pair);
    assert_eq!(t.key.stage, Stage::CornerToCorner);
    pass(&mut wf, &pair);
    assert_eq!(task(&wf, &pair).key.stage, Stage::AllLengths, "pairs skip M-L");
    assert!(wf.check_invariants().is_ok());
}

#[test]
fn partial_al_keeps_missing_paths_open() {
    let mut wf = transmit_eagle();
    let t = advance_to_al(&mut wf, 3);
    assert_eq!(t.paths.len(), 144);
    let ests: Vec<_> = t.paths.paths[..96].iter().map(|p| est(ProtocolId::Transmit, p, 0.95, 5)).collect();
    let stats = aggregate(&t.key.subchip, t.key.protocol, t.key.stage, &ests).unwrap();
    match wf.record(&t.key, &stats, t.threshold).unwrap() {
        RecordOutcome::Partial { missing } => assert_eq!(missing.len(), 48),
        other => panic!("{other:?}"),
    }
    let again = task(&wf, &t.key.subchip);
    assert_eq!(again.missing.len(), 48);
    assert_eq!(wf.merge(&t.key, &[]).unwrap(), RecordOutcome::Unchanged);

    let outside = est(ProtocolId::Transmit, &Path(vec![100, 101]), 0.9, 5);
    assert!(matches!(wf.merge(&t.key, &[outside]), Err(WorkflowError::PathOutsideSubChip { .. })));

    let rest: Vec<_> = again.missing.iter().map(|p| est(ProtocolId::Transmit, p, 0.95, 5)).collect();
    assert!(matches!(wf.merge(&t.key, &rest).unwrap(), RecordOutcome::Completed { .. }));
    let ladder = wf.state().ladder(ProtocolId::Transmit, &t.key.subchip).unwrap();
    assert!(ladder.is_capable());
    let rec = &ladder.stages[&Stage::AllLengths];
    assert_eq!(rec.stats.estimates.len(), 144);
    assert!(rec.entries.values().all(|e| e.len() == 1));
    let stamps: std::collections::BTreeSet<u64> = rec.entries.values().map(|e| e[0].timestamp).collect();
    assert_eq!(stamps.len(), 2, "two commits, two timestamps");
}

#[test]
fn conflicting_rerun_keeps_both_and_newest_wins() {
    let mut wf = transmit_eagle();
    let t = task(&wf, &SubChipKey::single(2));
    let paths = &t.paths.paths;
    let first: Vec<_> = paths[..4].iter().map(|p| est(ProtocolId::Transmit, p, 0.9, 1)).collect();
    let stats = aggregate(&t.key.subchip, t.key.protocol, t.key.stage, &first).unwrap();
    wf.record(&t.key, &stats, t.threshold).unwrap();

    let mut second: Vec<_> = paths[4..].iter().map(|p| est(ProtocolId::Transmit, p, 0.9, 2)).collect();
    second.push(est(ProtocolId::Transmit, &paths[0], 0.7, 2));
    wf.merge(&t.key, &second).unwrap();

    let st = wf.state();
    assert_eq!(st.conflicts.len(), 1);
    assert_eq!((st.conflicts[0].kept_seed, st.conflicts[0].superseded_seed), (2, 1));
    let rec = &st.ladder(ProtocolId::Transmit, &t.key.subchip).unwrap().stages[&Stage::CornerToCorner];
    assert_eq!(rec.entries[&paths[0]].len(), 2);
    assert_eq!(rec.stats.min, 0.7);
    assert_eq!(rec.stats.argmin, paths[0]);
    assert!(wf.journal().text().unwrap().contains(r#""type":"conflict""#));

    let back = Workflow::resume(ChipTopology::eagle(), &wf.journal().text().unwrap()).unwrap();
    assert_eq!(back.state().digest(), wf.state().digest());
}

#[test]
fn noiseless_rectangle_al_min_is_one() {
    let mut wf = transmit_eagle();
    let t = advance_to_al(&mut wf, 9);
    let config = ProtocolConfig::default();
    let ests: Vec<FidelityEstimate> = t
        .paths
        .paths
        .iter()
        .map(|p| {
            let results: BTreeMap<_, _> = config
                .variants(ProtocolId::Transmit)
                .into_iter()
                .map(|v| {
                    let c = build_circuit(ProtocolId::Transmit, p, &v, &config).unwrap();
                    (v, run_trajectories(&c, &NoiseModel::noiseless(), 64, 3).unwrap())
                })
                .collect();
            estimate_fidelity(ProtocolId::Transmit, p, &config, &results, 3).unwrap()
        })
        .collect();
    let stats = aggregate(&t.key.subchip, t.key.protocol, t.key.stage, &ests).unwrap();
    assert_eq!((stats.min, stats.mean, stats.max), (1.0, 1.0, 1.0));
}

#[test]
fn estimator_converges_to_oracle() {
    let config = ProtocolConfig::default();
    let noise = NoiseModel::depolarizing(0.0, 0.02);
    let path = Path(vec![0, 1, 2, 3]);
    for p in [ProtocolId::Transmit, ProtocolId::Teleportation, ProtocolId::EntanglementSwapping] {
        let path = if p == ProtocolId::EntanglementSwapping { Path((0..6).collect()) } else { path.clone() };
        let mut results = BTreeMap::new();
        let mut oracle = BTreeMap::new();
        for (i, v) in config.variants(p).into_iter().enumerate() {
            let c = build_circuit(p, &path, &v, &config).unwrap();
            oracle.insert(v, run_density_matrix(&c, &noise).unwrap().probability_where(|b| c.is_success(b)));
            results.insert(v, run_trajectories(&c, &noise, 100_000, 17 + i as u64).unwrap());
        }
        let e = estimate_fidelity(p, &path, &config, &results, 0).unwrap();
        let s: Vec<f64> = oracle.values().copied().collect();
        let exact = if p == ProtocolId::EntanglementSwapping {
            (s.iter().sum::<f64>() - 1.0) / 2.0
        } else {
            s.iter().sum::<f64>() / s.len() as f64
        };
        assert!((e.value - exact).abs() <= 4.0 * e.stderr, "{p}: {} vs {exact} (se {})", e.value, e.stderr);
    }
    // The spot check from the simulator contract: transmit n = 4, +x, within 3 sigma.
    let v = config.variants(ProtocolId::Transmit)[2];
    let c = build_circuit(ProtocolId::Transmit, &path, &v, &config).unwrap();
    let exact = run_density_matrix(&c, &noise).unwrap().probability_where(|b| c.is_success(b));
    let f = run_trajectories(&c, &noise, 100_000, 99).unwrap().frequency_where(|b| c.is_success(b));
    assert!((f - exact).abs() <= 3.0 * (exact * (1.0 - exact) / 1e5).sqrt(), "{f} vs {exact}");
}

fn journal_with_commits() -> String {
    let mut wf = transmit_eagle().with_digest_every(1);
    for r in 1..=3 {
        pass(&mut wf, &SubChipKey::single(r));
    }
    wf.journal().text().unwrap()
}

#[test]
fn resume_refuses_damaged_journals() {
    let text = journal_with_commits();
    assert!(Workflow::resume(ChipTopology::eagle(), &text).is_ok());

    let cut = &text[..text.len() - 10];
    match Workflow::resume(ChipTopology::eagle(), cut) {
        Err(WorkflowError::Journal(JournalError::Corrupt { last_valid, .. })) => {
            assert!(last_valid.contains("commit"), "{last_valid}")
        }
        other => panic!("{:?}", other.err()),
    }

    let digest_line = text.lines().find(|l| l.contains(r#""type":"digest""#)).unwrap();
    let tampered = text.replacen(digest_line, &digest_line.replace(r#""state_digest":""#, r#""state_digest":"00"#), 1);
    assert!(matches!(
        Workflow::resume(ChipTopology::eagle(), &tampered),
        Err(WorkflowError::Journal(JournalError::DigestMismatch { .. }))
    ));

    // Result lines without their commit.
    let lines: Vec<&str> = text.lines().collect();
    let last_commit = lines.iter().rposition(|l| l.contains(r#""type":"commit""#)).unwrap();
    let dangling: String = lines[..last_commit].iter().map(|l| format!("{l}\n")).collect();
    assert!(matches!(
        Workflow::resume(ChipTopology::eagle(), &dangling),
        Err(WorkflowError::Journal(JournalError::Corrupt { .. }))
    ));

    let versioned = text.replacen(r#""schema_version":1"#, r#""schema_version":9"#, 1);
    assert!(matches!(
        Workflow::resume(ChipTopology::eagle(), &versioned),
        Err(WorkflowError::Journal(JournalError::Version(9)))
    ));

    match Workflow::resume(ChipTopology::heron(), &text) {
        Err(WorkflowError::Journal(e @ JournalError::TopologyMismatch { .. })) => {
            assert!(e.to_string().contains("eagle-r3"))
        }
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn stage_mismatch_is_rejected() {
    let mut wf = transmit_eagle();
    let t = task(&wf, &SubChipKey::single(4));
    let ests: Vec<_> = t.paths.paths.iter().map(|p| est(ProtocolId::Transmit, p, 0.9, 1)).collect();
    let stats = aggregate(&t.key.subchip, t.key.protocol, Stage::MaxLengths, &ests).unwrap();
    assert!(matches!(wf.record(&t.key, &stats, t.threshold), Err(WorkflowError::Mismatch { .. })));
    let wrong = TaskKey { stage: Stage::MaxLengths, ..t.key.clone() };
    assert!(matches!(wf.record(&wrong, &stats, t.threshold), Err(WorkflowError::Unplanned(_))));
}
