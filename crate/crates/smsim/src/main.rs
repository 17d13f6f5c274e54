//! Command-line front end: trace generation, single-model simulation,
//! A/B comparison of run reports, and batch sweeps.
//!
//! Exit codes: 0 success; 1 I/O or invalid file content (including failed
//! simulations); 2 invalid usage; 3 semantically mismatched inputs.
//! Every subcommand is deterministic given identical inputs; no
//! environment variable affects results.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smsim::{files, render, sweep, Error};
use smsim_core::cache::CacheStats;
use smsim_core::config::ModelKind;
use smsim_core::metrics;
use smsim_core::tracegen::{generate, Pattern, WorkloadSpec};
use smsim_core::trace::TraceFile;
use smsim_core::{run, OpcodeClass};

#[derive(Parser)]
#[command(
    name = "smsim",
    version,
    about = "Cycle-level simulator of one GPU streaming multiprocessor",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic workload trace (JSON Lines)
    GenTrace(GenTraceArgs),
    /// Simulate one trace under one hardware model
    Simulate(SimulateArgs),
    /// Compare two run reports of the same trace
    Compare(CompareArgs),
    /// Simulate every trace in a directory under both models
    Sweep(SweepArgs),
}

/// Synthetic access pattern families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PatternArg {
    /// Loads whose active lanes all fall inside one 32-byte sector
    Coalesced,
    /// Lane i reads base + i * stride bytes (see --stride)
    Strided,
    /// Per-lane addresses drawn uniformly from the warp's window
    Random,
    /// Several kernels whose bodies occupy identical PC ranges
    IcacheThrash,
    /// Alternating integer/branch stream (see --taken-ratio)
    BranchHeavy,
    /// Shared-memory loads with a fixed bank-conflict degree
    SharedConflict,
    /// Rotating blend of all opcode classes
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Baseline,
    Improved,
}

impl From<ModelArg> for ModelKind {
    fn from(arg: ModelArg) -> ModelKind {
        match arg {
            ModelArg::Baseline => ModelKind::Baseline,
            ModelArg::Improved => ModelKind::Improved,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Json,
    Table,
    Csv,
}

#[derive(Args)]
struct GenTraceArgs {
    /// Access pattern to synthesize
    #[arg(long, value_enum)]
    pattern: PatternArg,
    /// Number of warps per kernel
    #[arg(long)]
    warps: u32,
    /// Instructions per warp including the terminator (ignored by
    /// icache-thrash, whose body length is --body-len)
    #[arg(long, default_value_t = 64)]
    len: u32,
    /// Seed for the patterns that draw random numbers
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// strided only: per-lane stride in bytes
    #[arg(long)]
    stride: Option<u64>,
    /// icache-thrash only: number of kernels
    #[arg(long)]
    kernels: Option<u32>,
    /// icache-thrash only: instructions per kernel body
    #[arg(long)]
    body_len: Option<u32>,
    /// branch-heavy only: probability a branch is taken (0..=1)
    #[arg(long)]
    taken_ratio: Option<f64>,
    /// shared-conflict only: lanes landing on each used bank
    #[arg(long)]
    conflict_degree: Option<u32>,
    /// Machine configuration JSON ({} or absent -> defaults)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Trace file to write
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Trace file (JSON Lines)
    #[arg(long)]
    trace: PathBuf,
    /// Machine configuration JSON ({} or absent -> defaults)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Force every subsystem to this hardware model, overriding the
    /// config's model selection and per-subsystem overrides
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Write the full run report as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// Run report of the base model
    #[arg(long)]
    base: PathBuf,
    /// Run report of the variant model
    #[arg(long)]
    variant: PathBuf,
    /// Write the rendered comparison here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Output rendering
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    format: FormatArg,
}

#[derive(Args)]
struct SweepArgs {
    /// Directory containing .jsonl trace files
    #[arg(long)]
    traces: PathBuf,
    /// Machine configuration JSON ({} or absent -> defaults)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the full sweep report as JSON here
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<(), Error> {
    match command {
        Command::GenTrace(args) => cmd_gen_trace(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Compare(args) => cmd_compare(args),
        Command::Sweep(args) => cmd_sweep(args),
    }
}

/// Map pattern flags to a `Pattern`, rejecting flags that belong to a
/// different pattern so a misdirected invocation fails loudly.
fn build_pattern(args: &GenTraceArgs) -> Result<Pattern, Error> {
    let mut stray: Vec<&str> = Vec::new();
    if args.stride.is_some() && args.pattern != PatternArg::Strided {
        stray.push("--stride");
    }
    if args.kernels.is_some() && args.pattern != PatternArg::IcacheThrash {
        stray.push("--kernels");
    }
    if args.body_len.is_some() && args.pattern != PatternArg::IcacheThrash {
        stray.push("--body-len");
    }
    if args.taken_ratio.is_some() && args.pattern != PatternArg::BranchHeavy {
        stray.push("--taken-ratio");
    }
    if args.conflict_degree.is_some() && args.pattern != PatternArg::SharedConflict {
        stray.push("--conflict-degree");
    }
    if !stray.is_empty() {
        return Err(Error::Usage {
            message: format!(
                "{} {} not apply to this pattern",
                stray.join(", "),
                if stray.len() == 1 { "does" } else { "do" }
            ),
        });
    }
    Ok(match args.pattern {
        PatternArg::Coalesced => Pattern::Coalesced,
        PatternArg::Strided => Pattern::Strided {
            stride_bytes: args.stride.unwrap_or(128),
        },
        PatternArg::Random => Pattern::Random { seed: args.seed },
        PatternArg::IcacheThrash => Pattern::IcacheThrash {
            kernel_count: args.kernels.unwrap_or(2),
            body_len: args.body_len.unwrap_or(64),
        },
        PatternArg::BranchHeavy => Pattern::BranchHeavy {
            taken_ratio: args.taken_ratio.unwrap_or(0.5),
            seed: args.seed,
        },
        PatternArg::SharedConflict => Pattern::SharedConflict {
            conflict_degree: args.conflict_degree.unwrap_or(2),
        },
        PatternArg::Mixed => Pattern::Mixed { seed: args.seed },
    })
}

/// The opcode name exactly as it appears in trace files.
fn wire_name(op: OpcodeClass) -> String {
    match serde_json::to_value(op).expect("opcode serializes") {
        serde_json::Value::String(name) => name,
        _ => unreachable!("opcode classes serialize as strings"),
    }
}

fn mix_line(trace: &TraceFile) -> String {
    let mut counts: BTreeMap<OpcodeClass, usize> = BTreeMap::new();
    for ins in &trace.instructions {
        *counts.entry(ins.opcode).or_default() += 1;
    }
    OpcodeClass::all()
        .iter()
        .filter_map(|op| counts.get(op).map(|n| format!("{} {n}", wire_name(*op))))
        .collect::<Vec<_>>()
        .join(", ")
}

fn cmd_gen_trace(args: GenTraceArgs) -> Result<(), Error> {
    let cfg = files::load_config(args.config.as_deref())?;
    let pattern = build_pattern(&args)?;
    let spec = WorkloadSpec {
        pattern,
        num_warps: args.warps,
        instructions_per_warp: args.len,
    };
    let trace = generate(&spec, &cfg).map_err(|e| Error::Usage {
        message: e.to_string(),
    })?;
    files::write_trace(&args.out, &trace)?;
    let kernels = trace.header.kernels.len();
    let warps: u32 = trace.header.kernels.iter().map(|k| k.num_warps).sum();
    println!(
        "wrote {}: {} kernel(s), {} warp(s), {} instruction record(s)",
        args.out.display(),
        kernels,
        warps,
        trace.instructions.len()
    );
    println!("mix: {}", mix_line(&trace));
    Ok(())
}

fn ratio_label(stats: &CacheStats) -> String {
    render::opt_fixed(metrics::miss_ratio(stats), 4)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let mut cfg = files::load_config(args.config.as_deref())?;
    if let Some(model) = args.model {
        cfg = sweep::force_model(&cfg, model.into());
    }
    let trace = files::read_trace(&args.trace)?;
    let report = run(&trace, &cfg).map_err(|e| Error::Data {
        message: format!("{}: {e}", args.trace.display()),
    })?;
    if let Some(out) = &args.out {
        files::write_json(out, &report)?;
    }
    println!(
        "{}: {} cycles; miss ratios: L0I {}, L1I {}, L1D {}",
        report.models.label(),
        report.total_cycles,
        ratio_label(&report.caches.l0i_total()),
        ratio_label(&report.caches.l1i),
        ratio_label(&report.caches.l1d),
    );
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<(), Error> {
    let base = files::read_report(&args.base)?;
    let variant = files::read_report(&args.variant)?;
    let cmp = metrics::compare(&base, &variant).map_err(|e| Error::Mismatch {
        message: e.to_string(),
    })?;
    let rendered = match args.format {
        FormatArg::Json => render::json(&cmp),
        FormatArg::Table => render::comparison_table(&cmp),
        FormatArg::Csv => render::comparison_csv(&cmp),
    };
    match &args.out {
        Some(out) => {
            files::write_text(out, &rendered)?;
            println!(
                "{} vs {} on {}: speedup {}, avc {}% -> {}",
                cmp.base_model,
                cmp.variant_model,
                cmp.trace_name,
                render::opt_fixed(cmp.speedup, 4),
                render::opt_fixed(cmp.avc_percent, 4),
                out.display()
            );
        }
        None => print!("{rendered}"),
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let cfg = files::load_config(args.config.as_deref())?;
    let traces = sweep::discover_traces(&args.traces)?;
    let report = sweep::run_sweep(&traces, &cfg);
    if let Some(out) = &args.out {
        files::write_json(out, &report)?;
    }
    print!("{}", render::sweep_table(&report));
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Error::Partial {
            failed: report.failures.len(),
            total: traces.len(),
        })
    }
}
