use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use trapbench::analysis::{emit_report, FitOptions, ReportFormat};
use trapbench::harness::{
    run_experiment, run_matrix, Caps, ExperimentConfig, ExperimentSpec, ResultStore, RunRecord, TechniqueSpec,
    WorkloadRef,
};
use trapbench::primitives::{capability_table, PrimitiveKind, PrimitiveSpec};
use trapbench::workload::{write_workload, Pattern, WorkloadParams};

#[derive(Parser)]
#[command(name = "trapbench", version, about = "Trap- and probe-based instrumentation benchmarks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run an experiment matrix and append records to a JSONL log.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config's worker count (records become contended).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Generate a workload executable with known event counts.
    Gen {
        #[arg(long)]
        k_exec: u64,
        #[arg(long)]
        k_mem: u64,
        #[arg(long)]
        total_instr: u64,
        #[arg(long, default_value = "tight-loop")]
        pattern: Pattern,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize a record log.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value = "table")]
        format: ReportFormat,
        /// Fit each workload separately.
        #[arg(long)]
        per_pattern: bool,
        /// Keep capped runs in the trend lines.
        #[arg(long)]
        include_truncated: bool,
    },
    /// Print which technique supports which primitive.
    Capabilities,
    /// Instrument one executable once and print what was counted.
    Trace {
        exe: PathBuf,
        #[arg(long)]
        technique: TechniqueSpec,
        #[arg(long)]
        primitive: Option<PrimitiveKind>,
        /// Symbol, 0xADDR, sym+off, a..b, a:len, or an instruction class.
        #[arg(long)]
        target: Option<String>,
        #[arg(long, default_value_t = 1)]
        reps: u32,
        #[arg(long)]
        step_cap: Option<u64>,
        #[arg(long)]
        fault_cap: Option<u64>,
        /// Print records as JSON lines instead of a summary.
        #[arg(long)]
        json: bool,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Run { config, out, jobs } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(j) = jobs {
                cfg.parallel = j;
            }
            let mut store = ResultStore::open(&out)?;
            let mut append_err = None;
            let recs = run_matrix(&cfg, |r| {
                eprintln!("{}", progress_line(r));
                if let Err(e) = store.append_record(r) {
                    append_err.get_or_insert(e);
                }
            });
            if let Some(e) = append_err {
                return Err(e.into());
            }
            let failed = recs.iter().filter(|r| !r.is_ok()).count();
            eprintln!("{} records appended to {}, {failed} failed", recs.len(), out.display());
            Ok(if failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
        }
        Cmd::Gen { k_exec, k_mem, total_instr, pattern, out } => {
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (exe, meta) = write_workload(&out, &WorkloadParams::new(k_exec, k_mem, total_instr, pattern))?;
            let a = &meta.analytic;
            println!("workload   {}", exe.display());
            println!("metadata   {}", exe.with_extension("json").display());
            println!("main       {:#x}", meta.main_addr);
            println!("exit       {:#x}", meta.exit_addr);
            println!("hot_insn   {:#x}  executions {}", meta.hot_insn_addr, a.hot_exec);
            println!(
                "hot_cell   {:#x}  reads {} writes {}",
                meta.hot_cell_addr, a.hot_cell_reads, a.hot_cell_writes
            );
            println!("cell page  {:#x}  accesses {}", meta.cell_page, a.cell_page_accesses);
            println!("window     {} instructions", a.total_instr);
            print!("stdout     {}", meta.expected_stdout);
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Report { input, format, per_pattern, include_truncated } => {
            let recs = ResultStore::load(&input)?;
            print!("{}", emit_report(&recs, format, FitOptions { per_pattern, include_truncated }));
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Capabilities => {
            print!("{}", capability_table());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Trace { exe, technique, primitive, target, reps, step_cap, fault_cap, json } => {
            if matches!(technique, TechniqueSpec::None) && primitive.is_some() {
                bail!("technique none takes no primitive");
            }
            if technique.kind().is_some() && primitive.is_none() {
                bail!("--primitive is required for {}", technique.name());
            }
            let spec = ExperimentSpec {
                id: format!("trace:{}", exe.display()),
                workload: WorkloadRef::new(&exe),
                technique,
                primitive: primitive.map(|k| PrimitiveSpec::new(k, target.as_deref())),
                repetitions: Some(reps),
                hw_len: None,
                multi_slot: false,
            };
            let defaults = Caps::default();
            let caps = Caps {
                single_step: step_cap.unwrap_or(defaults.single_step),
                page_fault: fault_cap.unwrap_or(defaults.page_fault),
            };
            for rep in 0..reps {
                let rec = run_experiment(&spec, rep, &caps, None)?;
                if json {
                    println!("{}", serde_json::to_string(&rec)?);
                } else {
                    println!("{}", summary_line(&rec));
                }
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn progress_line(r: &RunRecord) -> String {
    match &r.error {
        Some(e) => format!("{} #{}: failed: {e}", r.spec_id, r.rep),
        None => summary_line(r),
    }
}

fn summary_line(r: &RunRecord) -> String {
    let ms = |ns: Option<u64>| ns.map_or_else(|| "-".into(), |n| format!("{:.3} ms", n as f64 / 1e6));
    let mut s = format!(
        "{} #{}: events {}{}  wall {}  cpu {}",
        r.spec_id,
        r.rep,
        r.event_count,
        r.expected_count.map(|e| format!(" (expected {e})")).unwrap_or_default(),
        ms(Some(r.wall_ns)),
        ms(r.combined_cpu_ns.or(r.cpu_child_ns)),
    );
    if r.truncated {
        s += "  truncated";
    }
    s
}
