use std::fs;
use std::path::{Path as FsPath, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use qpb_core::assess::{aggregate, FidelityEstimate};
use qpb_core::cli::{EXIT_BACKEND, EXIT_CONFIG, EXIT_JOURNAL};
use qpb_core::protocols::{ProtocolConfig, ProtocolId};
use qpb_core::topology::ChipTopology;
use qpb_core::workflow::{JournalSink, Workflow, WorkflowMode};

fn qpb(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qpb")).args(args).env_remove("QPB_SEED").output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn ok(o: Output) -> String {
    assert!(o.status.success(), "exit {:?}: {}", o.status.code(), String::from_utf8_lossy(&o.stderr));
    stdout(&o)
}

fn json(path: &FsPath) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn small_run(out: &FsPath, extra: &[&str]) -> Output {
    let mut args = vec![
        "run",
        "--topo",
        "eagle",
        "--protocols",
        "transmit",
        "--mode",
        "independent",
        "--shots",
        "32",
        "--out",
        out.to_str().unwrap(),
    ];
    args.extend_from_slice(extra);
    qpb(&args)
}

#[test]
fn paths_command_counts() {
    let o = ok(qpb(&["paths", "--topo", "eagle", "--rect", "1", "--stage", "A-L", "--protocol", "transmit"]));
    assert_eq!(o.trim(), "144 paths");
    assert_eq!(ok(qpb(&["paths", "--rect", "1", "--stage", "c2c"])).trim(), "8 paths");
    assert_eq!(ok(qpb(&["paths", "--rect", "1,5", "--stage", "c2c"])).trim(), "6 paths");
    let listed = ok(qpb(&["paths", "--rect", "1", "--stage", "c2c", "--list"]));
    assert_eq!(listed.lines().count(), 9);
    assert_eq!(qpb(&["paths", "--rect", "99", "--stage", "c2c"]).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn noiseless_run_writes_all_reports() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    ok(small_run(&out, &[]));
    for f in ["journal.jsonl", "vector.json", "scores.json", "pairs.json", "swapdist.json", "summary.json"] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    assert!(out.join("charts/chart_rows.json").is_file());
    assert!(out.join("charts/rect_transmit_single_A-L.svg").is_file());
    assert!(out.join("charts/swapdist_transmit.svg").is_file());

    let scores = json(&out.join("scores.json"));
    assert_eq!(scores[0]["N0"], 18);
    assert_eq!(scores[0]["N"], 18);
    assert_eq!(scores[0]["score"], 1.0);
    assert_eq!(scores[0]["unit"], "dimensionless");
    let vector = json(&out.join("vector.json"));
    assert!(vector["singles"].as_array().unwrap().iter().all(|e| e["outcome"]["capable"] == 1.0));
    let pairs = json(&out.join("pairs.json"));
    assert_eq!(pairs[0]["passed"].as_u64().unwrap() as usize, ChipTopology::eagle().rect_adjacency.len());
    let swap = json(&out.join("swapdist.json"));
    let ds: Vec<u64> = swap[0]["points"].as_array().unwrap().iter().map(|p| p["distance"].as_u64().unwrap()).collect();
    assert_eq!(ds, vec![1, 2, 3, 4, 5, 6]);
    let rows = json(&out.join("charts/chart_rows.json"));
    assert!(rows.as_array().unwrap().iter().all(|r| (r["threshold"].as_f64().unwrap() - 2.0 / 3.0).abs() < 1e-15));

    // Rerunning without --resume would clobber the journal.
    assert_eq!(small_run(&out, &[]).status.code(), Some(EXIT_CONFIG));
    // Resuming a finished run is a no-op.
    let before = fs::read(out.join("journal.jsonl")).unwrap();
    ok(small_run(&out, &["--resume"]));
    assert_eq!(fs::read(out.join("journal.jsonl")).unwrap(), before);
}

#[test]
fn saturating_noise_fails_everything() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    ok(small_run(&out, &["--noise-p2", "0.9"]));
    let vector = json(&out.join("vector.json"));
    assert!(vector["singles"].as_array().unwrap().iter().all(|e| e["outcome"]["failed_at"] == "c2c"));
    assert_eq!(json(&out.join("scores.json"))[0]["score"], 0.0);
    assert_eq!(json(&out.join("pairs.json"))[0]["passed"], 0);
}

fn read_tree(root: &FsPath) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn identical_invocations_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let noisy = ["--noise-p2", "0.01", "--noise-readout", "0.01", "--seed", "0x2a"];
    ok(small_run(&a, &noisy));
    ok(small_run(&b, &noisy));
    let (ta, tb) = (read_tree(&a), read_tree(&b));
    assert!(ta.len() > 8);
    assert_eq!(ta, tb);

    // QPB_SEED stands in for --seed.
    let c = dir.path().join("c");
    let args = ["run", "--topo", "eagle", "--protocols", "transmit", "--mode", "independent", "--shots", "32"];
    let o = Command::new(env!("CARGO_BIN_EXE_qpb"))
        .args(args)
        .args(["--noise-p2", "0.01", "--noise-readout", "0.01", "--out", c.to_str().unwrap()])
        .env("QPB_SEED", "42")
        .output()
        .unwrap();
    ok(o);
    assert_eq!(fs::read(a.join("journal.jsonl")).unwrap(), fs::read(c.join("journal.jsonl")).unwrap());

    let d = dir.path().join("d");
    ok(small_run(&d, &["--noise-p2", "0.01", "--noise-readout", "0.01", "--seed", "43"]));
    assert_ne!(fs::read(a.join("journal.jsonl")).unwrap(), fs::read(d.join("journal.jsonl")).unwrap());
}

#[test]
fn cancelled_jobs_resume_to_completion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let jobs = dir.path().join("jobs");
    fs::create_dir_all(&jobs).unwrap();
    let flaky = format!("mock://{}?cancel=0.2", jobs.display());
    let text = ok(small_run(&out, &["--backend", &flaky]));
    assert!(text.contains("open tasks:"), "{text}");
    let summary = json(&out.join("summary.json"));
    assert_eq!(summary["fixpoint"], false);
    assert!(!summary["open_tasks"].as_array().unwrap().is_empty());

    let steady = format!("mock://{}", jobs.display());
    let text = ok(small_run(&out, &["--backend", &steady, "--resume"]));
    assert!(!text.contains("open tasks:"), "{text}");
    assert_eq!(json(&out.join("summary.json"))["fixpoint"], true);
    let scores = json(&out.join("scores.json"));
    assert_eq!(scores[0]["score"], 1.0);
    let pairs = json(&out.join("pairs.json"));
    assert!(pairs[0]["partial"].as_array().unwrap().is_empty());
}

#[test]
fn partial_pairs_are_flagged() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let jobs = dir.path().join("jobs");
    fs::create_dir_all(&jobs).unwrap();
    // Singles complete on a clean backend first, then pairs run on a flaky one.
    ok(small_run(&out, &["--budget", "19008"]));
    let flaky = format!("mock://{}?cancel=0.3", jobs.display());
    ok(small_run(&out, &["--backend", &flaky, "--resume"]));
    let pairs = json(&out.join("pairs.json"));
    let partial = pairs[0]["partial"].as_array().unwrap();
    assert!(!partial.is_empty());
    let passed: Vec<&Value> = pairs[0]["pairs"].as_array().unwrap().iter().collect();
    assert!(partial.iter().all(|p| !passed.contains(&p)));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    assert_eq!(small_run(&out, &["--shots", "0"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(small_run(&out, &["--noise-p2", "1.5"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(small_run(&out, &["--backend", "ibm://brisbane"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(small_run(&out, &["--threshold", "transmit=2"]).status.code(), Some(EXIT_CONFIG));
    assert_eq!(
        qpb(&["run", "--protocols", "transmit", "--out", out.to_str().unwrap()]).status.code(),
        Some(EXIT_CONFIG),
        "strict mode without do_nothing"
    );

    let jobs = dir.path().join("jobs");
    fs::create_dir_all(&jobs).unwrap();
    fs::write(jobs.join("OFFLINE"), "").unwrap();
    let offline = format!("mock://{}", jobs.display());
    let o = small_run(&out, &["--backend", &offline]);
    assert_eq!(o.status.code(), Some(EXIT_BACKEND));
    let journal = fs::read_to_string(out.join("journal.jsonl")).unwrap();
    assert!(journal.starts_with(r#"{"type":"header""#));

    let j = out.join("journal.jsonl");
    let mut text = journal.clone();
    text.push_str(r#"{"type":"digest","se"#);
    fs::write(&j, &text).unwrap();
    let o = qpb(&["report", "vector", j.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_JOURNAL));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));
    assert_eq!(small_run(&out, &["--resume"]).status.code(), Some(EXIT_JOURNAL));

    fs::write(&j, &journal).unwrap();
    let o = qpb(&["report", "vector", "--topo", "heron", j.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_JOURNAL));
    assert_eq!(qpb(&["report", "vector", "/nonexistent/journal.jsonl"]).status.code(), Some(EXIT_JOURNAL));
}

#[test]
fn empty_journal_reports() {
    let dir = tempfile::tempdir().unwrap();
    let j = dir.path().join("empty.jsonl");
    fs::write(&j, "").unwrap();
    let v: Value = serde_json::from_str(&ok(qpb(&["report", "vector", j.to_str().unwrap()]))).unwrap();
    assert_eq!(v["singles"], Value::Array(vec![]));
    let s: Value = serde_json::from_str(&ok(qpb(&["report", "scores", j.to_str().unwrap()]))).unwrap();
    assert_eq!(s, Value::Array(vec![]));
}

/// Writes a journal in which `count` rectangles pass every stage at exactly
/// `avg` and the rest fail c2c, per protocol.
fn synthetic_journal(path: &FsPath, topology: ChipTopology, rows: &[(ProtocolId, u32, f64)]) {
    let protocols: Vec<ProtocolId> = rows.iter().map(|r| r.0).collect();
    let mut wf = Workflow::new(topology, &protocols, WorkflowMode::Independent, ProtocolConfig::default())
        .unwrap()
        .with_journal(JournalSink::create(path).unwrap())
        .unwrap();
    loop {
        let plan = wf.plan();
        if plan.is_empty() {
            break;
        }
        for task in plan {
            let &(_, count, avg) = rows.iter().find(|r| r.0 == task.key.protocol).unwrap();
            let single = task.key.subchip.0.len() == 1;
            let value = if single && task.key.subchip.first() <= count { avg } else { 0.1 };
            let ests: Vec<FidelityEstimate> = task
                .paths
                .paths
                .iter()
                .map(|p| FidelityEstimate {
                    value,
                    stderr: 0.0,
                    shots_used: 1,
                    path: p.clone(),
                    protocol: task.key.protocol,
                    seed: 0,
                })
                .collect();
            let stats = aggregate(&task.key.subchip, task.key.protocol, task.key.stage, &ests).unwrap();
            wf.record(&task.key, &stats, task.threshold).unwrap();
        }
    }
    wf.checkpoint().unwrap();
}

#[test]
fn score_report_reproduces_published_table() {
    use ProtocolId::*;
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        (
            ChipTopology::heron(),
            [
                (Transmit, 13, 0.847, 0.524),
                (DoNothing, 11, 0.824, 0.431),
                (Teleportation, 11, 0.795, 0.416),
                (BellStateTransfer, 12, 0.74, 0.422),
                (SuperDenseCoding, 9, 0.694, 0.297),
                (EntanglementSwapping, 10, 0.65, 0.309),
            ],
        ),
        (
            ChipTopology::eagle(),
            [
                (Transmit, 10, 0.8, 0.442),
                (DoNothing, 6, 0.715, 0.247),
                (Teleportation, 4, 0.713, 0.158),
                (BellStateTransfer, 1, 0.515, 0.028),
                (SuperDenseCoding, 0, 0.0, 0.0),
                (EntanglementSwapping, 0, 0.0, 0.0),
            ],
        ),
    ];
    for (topo, table) in cases {
        let j = dir.path().join(format!("{}.jsonl", topo.name));
        let rows: Vec<(ProtocolId, u32, f64)> = table.iter().map(|r| (r.0, r.1, r.2)).collect();
        synthetic_journal(&j, topo, &rows);
        let scores: Value = serde_json::from_str(&ok(qpb(&["report", "scores", j.to_str().unwrap()]))).unwrap();
        for (p, count, _, published) in table {
            let row = scores.as_array().unwrap().iter().find(|r| r["protocol"] == p.as_str()).unwrap();
            assert_eq!(row["N"], count);
            let got = row["score"].as_f64().unwrap();
            assert!((got - published).abs() <= 0.01, "{p}: {got} vs {published}");
        }
    }
}

#[test]
fn overlap_and_chart_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(small_run(&a, &[]));
    ok(small_run(&b, &["--noise-p2", "0.9"]));
    let ja = a.join("journal.jsonl");
    let jb = b.join("journal.jsonl");
    let both = |x: &PathBuf, y: &PathBuf| -> Value {
        serde_json::from_str(&ok(qpb(&[
            "report",
            "overlap",
            x.to_str().unwrap(),
            y.to_str().unwrap(),
            "--protocol",
            "transmit",
        ])))
        .unwrap()
    };
    let same = both(&ja, &ja);
    assert!(same["stages"].as_array().unwrap().iter().all(|s| s["jaccard"] == 1.0));
    let diff = both(&ja, &jb);
    let al = diff["stages"].as_array().unwrap().iter().find(|s| s["stage"] == "A-L").unwrap();
    assert_eq!(al["a"].as_array().unwrap().len(), 18);
    assert_eq!(al["jaccard"], 0.0);

    let charts = dir.path().join("charts");
    let listed =
        ok(qpb(&["report", "charts", ja.to_str().unwrap(), "--format", "svg", "--out", charts.to_str().unwrap()]));
    assert!(listed.lines().all(|n| charts.join(n).is_file()));
    let svg = fs::read_to_string(charts.join("rect_transmit_single_c2c.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("version=\"1.1\""));
    assert_eq!(svg, fs::read_to_string(a.join("charts/rect_transmit_single_c2c.svg")).unwrap());
    assert_eq!(qpb(&["report", "overlap", ja.to_str().unwrap()]).status.code(), Some(EXIT_CONFIG));
}

#[test]
fn export_circuit_document() {
    let text =
        ok(qpb(&["export-circuit", "--protocol", "super_dense_coding", "--path", "3-4-5-6", "--variant", "msg10"]));
    let doc: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(doc["protocol"], "super_dense_coding");
    assert!(doc["gates"].as_array().unwrap().iter().any(|g| g["op"] == "swap"));
    assert_eq!(
        qpb(&["export-circuit", "--protocol", "transmit", "--path", "0-1", "--variant", "msg10"]).status.code(),
        Some(EXIT_CONFIG)
    );
}
