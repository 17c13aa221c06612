use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use qpb_core::cli::{
    cmd_export_circuit, cmd_paths, cmd_report, cmd_run, parse_protocols, parse_threshold, resolve_seed, CliError,
    ReportKind, ReportRequest, RunConfig,
};
use qpb_core::protocols::{ProtocolConfig, ProtocolId, StateDesign, TeleportCorrection};
use qpb_core::report::ChartFormat;
use qpb_core::simengine::{NoiseModel, DEFAULT_SHOTS};
use qpb_core::topology::Stage;
use qpb_core::workflow::{RerunSeeding, WorkflowMode};

#[derive(Parser)]
#[command(name = "qpb", version, about = "Protocol-level benchmarking of rectangle-structured quantum chips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// List the assessment paths of a rectangle or adjacent pair.
    Paths {
        #[arg(long, default_value = "eagle")]
        topo: String,
        /// Rectangle index, or two comma separated indices for a pair.
        #[arg(long)]
        rect: String,
        #[arg(long, default_value = "A-L")]
        stage: Stage,
        #[arg(long, default_value = "transmit")]
        protocol: ProtocolId,
        /// Require at least one transport SWAP for teleportation and bell-state transfer.
        #[arg(long)]
        no_zero_swap: bool,
        /// Print every path before the count.
        #[arg(long)]
        list: bool,
    },
    /// Run the staged assessment to a fixpoint or the budget.
    Run(RunArgs),
    /// Build a report from one journal (two for overlap).
    Report {
        /// vector, scores, swapdist, pairs, overlap or charts
        kind: ReportKind,
        #[arg(required = true)]
        journals: Vec<PathBuf>,
        /// Topology name or file; defaults to the journal header's chip.
        #[arg(long)]
        topo: Option<String>,
        /// Protocol compared by `overlap`.
        #[arg(long, default_value = "do_nothing")]
        protocol: ProtocolId,
        /// Chart format for `charts`: rows or svg.
        #[arg(long, default_value = "svg")]
        format: ChartFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the circuit document of one protocol variant on a path.
    ExportCircuit {
        #[arg(long)]
        protocol: ProtocolId,
        /// Qubits joined by '-' or ','.
        #[arg(long)]
        path: String,
        /// Variant label such as +z, msg01, XX or phi+.
        #[arg(long)]
        variant: String,
        #[arg(long)]
        feed_forward: bool,
        #[arg(long)]
        templates: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value = "heron")]
    topo: String,
    /// sim://default or mock://<dir>?cancel=<rate>
    #[arg(long, default_value = "sim://default")]
    backend: String,
    #[arg(long, default_value_t = DEFAULT_SHOTS)]
    shots: u64,
    /// Decimal or 0x hex; falls back to QPB_SEED.
    #[arg(long)]
    seed: Option<String>,
    #[arg(long, default_value_t = 0.0)]
    noise_p1: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_p2: f64,
    #[arg(long, default_value_t = 0.0)]
    noise_readout: f64,
    /// Amplitude damping per layer on idle qubits.
    #[arg(long)]
    noise_damping: Option<f64>,
    #[arg(long, default_value = "strict")]
    mode: WorkflowMode,
    /// Comma separated, or `all`.
    #[arg(long, default_value = "all")]
    protocols: String,
    /// protocol=value; repeatable.
    #[arg(long = "threshold")]
    thresholds: Vec<String>,
    #[arg(long, default_value = "qpb-out")]
    out: PathBuf,
    /// Continue the journal in --out.
    #[arg(long)]
    resume: bool,
    /// Maximum circuits submitted by this invocation.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long, default_value_t = 1)]
    max_attempts: u32,
    /// Reuse the first attempt's seeds when a path is measured again.
    #[arg(long)]
    identical_reruns: bool,
    /// Protocol definition overrides (JSON).
    #[arg(long)]
    templates: Option<PathBuf>,
    /// Teleportation with mid-circuit measurement and conditional corrections.
    #[arg(long)]
    feed_forward: bool,
    /// Use this many Haar-random input states instead of the cardinal states.
    #[arg(long)]
    haar: Option<u16>,
    #[arg(long)]
    no_zero_swap: bool,
}

fn run_config(a: RunArgs) -> Result<RunConfig, CliError> {
    let seed = resolve_seed(a.seed.as_deref())?;
    let design = match a.haar {
        Some(samples) => StateDesign::Haar { samples, seed },
        None => StateDesign::Cardinal,
    };
    Ok(RunConfig {
        topology: a.topo,
        backend: a.backend,
        shots: a.shots,
        seed,
        noise: NoiseModel {
            p1: a.noise_p1,
            p2: a.noise_p2,
            readout_eps: a.noise_readout,
            idle_damping: a.noise_damping,
        },
        mode: a.mode,
        protocols: parse_protocols(&a.protocols)?,
        thresholds: a.thresholds.iter().map(|t| parse_threshold(t)).collect::<Result<_, _>>()?,
        protocol_config: ProtocolConfig {
            allow_zero_swap: !a.no_zero_swap,
            design,
            teleport_correction: correction(a.feed_forward),
            ..ProtocolConfig::default()
        },
        templates: a.templates,
        out: a.out,
        resume: a.resume,
        budget: a.budget,
        max_attempts: a.max_attempts,
        rerun: if a.identical_reruns { RerunSeeding::Identical } else { RerunSeeding::Fresh },
    })
}

fn correction(feed_forward: bool) -> TeleportCorrection {
    if feed_forward {
        TeleportCorrection::FeedForward
    } else {
        TeleportCorrection::PauliFrame
    }
}

fn dispatch(command: Command) -> Result<String, CliError> {
    match command {
        Command::Paths { topo, rect, stage, protocol, no_zero_swap, list } => {
            cmd_paths(&topo, &rect, stage, protocol, !no_zero_swap, list)
        }
        Command::Run(args) => {
            let cfg = run_config(args)?;
            let outcome = cmd_run(&cfg)?;
            let s = &outcome.summary;
            let mut text = format!(
                "{} circuits in {} jobs, {} tasks completed; reports in {}\n",
                s.circuits,
                s.jobs,
                s.completed_tasks,
                cfg.out.display()
            );
            if s.budget_exhausted {
                text.push_str("budget exhausted\n");
            }
            if !s.remaining.is_empty() {
                text.push_str("open tasks:\n");
                for (k, missing) in &s.remaining {
                    text.push_str(&format!("  {k} ({missing} paths missing)\n"));
                }
            }
            Ok(text)
        }
        Command::Report { kind, journals, topo, protocol, format, out } => {
            cmd_report(&ReportRequest { kind, journals, topology: topo, protocol, format, out })
        }
        Command::ExportCircuit { protocol, path, variant, feed_forward, templates } => {
            cmd_export_circuit(protocol, &path, &variant, correction(feed_forward), templates.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
