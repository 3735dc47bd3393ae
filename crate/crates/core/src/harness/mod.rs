//! Measured runs.
//!
//! Every traced run follows the same protocol: spawn stopped, run to `main`
//! under a temporary software breakpoint, arm the plan and a software
//! breakpoint on the exit point, sample clocks, let the target run, sample
//! clocks again on the exit trap, then disarm and let the target finish.
//! Arming and teardown are outside the measured window.

pub mod external;
pub mod native;
pub mod store;

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::Stdio;
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::decode::{classify, MAX_INSN_LEN};
use crate::primitives::{
    build_plan, capability, ArmAction, Capability, InstrumentationPlan, PlanError, PlanOptions, PrimitiveSpec,
    StepFilter, TechniqueKind,
};
use crate::probe::{inject_probe, plan_probe_site, read_probe_counter, remove_probe, ProbeError, ProbeSite};
use crate::target::{Launch, ResumeMode, StopEvent, StopKind, TargetError, TargetProcess};
use crate::trap::hw::record_hits;
use crate::trap::{
    arm_hw_slot, arm_sw_breakpoint, clear_hw_slot, disarm_sw_breakpoint, drive_single_step, handle_access_fault,
    handle_sw_hit, protect_range, run_to, teardown, FaultOutcome, HwSlot, PageTrap, SoftBreakpoint, StepConfig,
    StepEnd, TrapError, DEFAULT_FAULT_CAP, DEFAULT_STEP_CAP,
};
use crate::workload::{expected_counts, WorkloadError, WorkloadMetadata};

pub use external::{parse_report, run_external, ExternalReport};
pub use native::{run_native, NativeRun};
pub use store::{ResultStore, RunRecord, StoreError};

pub const DEFAULT_REPETITIONS: u32 = 10;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("spawn: {0}")]
    Spawn(TargetError),
    #[error(transparent)]
    Target(#[from] TargetError),
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error("transparency violated: {0}")]
    Transparency(String),
    #[error("external adapter: {0}")]
    Adapter(String),
    #[error("native run: {0}")]
    Native(String),
    #[error("target ended before the exit point: {0:?}")]
    EarlyExit(StopKind),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueSpec {
    /// Traced, nothing armed: the toolkit's own baseline.
    None,
    Dpi,
    SwBreakpoint,
    HwBreakpoint,
    SingleStep,
    PageFault,
    /// A command template run through `sh -c`.
    External(String),
}

impl TechniqueSpec {
    pub fn kind(&self) -> Option<TechniqueKind> {
        Some(match self {
            TechniqueSpec::Dpi => TechniqueKind::Dpi,
            TechniqueSpec::SwBreakpoint => TechniqueKind::SwBreakpoint,
            TechniqueSpec::HwBreakpoint => TechniqueKind::HwBreakpoint,
            TechniqueSpec::SingleStep => TechniqueKind::SingleStep,
            TechniqueSpec::PageFault => TechniqueKind::PageFault,
            TechniqueSpec::None | TechniqueSpec::External(_) => return None,
        })
    }

    pub fn name(&self) -> &str {
        match self {
            TechniqueSpec::None => "none",
            TechniqueSpec::External(_) => "external",
            other => other.kind().expect("in-process technique").as_str(),
        }
    }
}

impl From<TechniqueKind> for TechniqueSpec {
    fn from(k: TechniqueKind) -> Self {
        match k {
            TechniqueKind::Dpi => TechniqueSpec::Dpi,
            TechniqueKind::SwBreakpoint => TechniqueSpec::SwBreakpoint,
            TechniqueKind::HwBreakpoint => TechniqueSpec::HwBreakpoint,
            TechniqueKind::SingleStep => TechniqueSpec::SingleStep,
            TechniqueKind::PageFault => TechniqueSpec::PageFault,
        }
    }
}

impl std::str::FromStr for TechniqueSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "none" {
            return Ok(TechniqueSpec::None);
        }
        s.parse::<TechniqueKind>().map(Into::into)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Caps {
    pub single_step: u64,
    pub page_fault: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps { single_step: DEFAULT_STEP_CAP, page_fault: DEFAULT_FAULT_CAP }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkloadRef {
    pub path: PathBuf,
    /// Generator metadata; defaults to `<path>.json` when that file exists.
    #[serde(default)]
    pub metadata: Option<PathBuf>,
}

impl WorkloadRef {
    pub fn new(path: impl Into<PathBuf>) -> Self {
        WorkloadRef { path: path.into(), metadata: None }
    }

    pub fn load_metadata(&self) -> Result<Option<WorkloadMetadata>, HarnessError> {
        let path = match &self.metadata {
            Some(p) => p.clone(),
            None => {
                let guess = self.path.with_extension("json");
                if !guess.exists() {
                    return Ok(None);
                }
                guess
            }
        };
        Ok(Some(WorkloadMetadata::load(&path)?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: String,
    pub workload: WorkloadRef,
    pub technique: TechniqueSpec,
    #[serde(default)]
    pub primitive: Option<PrimitiveSpec>,
    #[serde(default)]
    pub repetitions: Option<u32>,
    /// Watch length for hardware data slots (default 8).
    #[serde(default)]
    pub hw_len: Option<u8>,
    /// Allow covering small data ranges with several hardware slots.
    #[serde(default)]
    pub multi_slot: bool,
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default)]
    pub caps: Caps,
    /// Worker threads; above 1 runs overlap and records are marked contended.
    #[serde(default)]
    pub parallel: usize,
    /// Record one untraced run per workload for overhead ratios.
    #[serde(default = "yes")]
    pub native_reference: bool,
    pub specs: Vec<ExperimentSpec>,
}

impl ExperimentConfig {
    pub fn new(specs: Vec<ExperimentSpec>) -> Self {
        ExperimentConfig {
            repetitions: DEFAULT_REPETITIONS,
            caps: Caps::default(),
            parallel: 0,
            native_reference: true,
            specs,
        }
    }

    /// Parses a config file; relative workload paths are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for s in &mut cfg.specs {
            s.workload.path = base.join(&s.workload.path);
            if let Some(m) = &mut s.workload.metadata {
                *m = base.join(&*m);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.caps.single_step == 0 || self.caps.page_fault == 0 {
            return bad("caps must be positive".into());
        }
        let mut ids = BTreeSet::new();
        for s in &self.specs {
            if !ids.insert(&s.id) {
                return bad(format!("duplicate spec id `{}`", s.id));
            }
            if s.repetitions == Some(0) || (s.repetitions.is_none() && self.repetitions == 0) {
                return bad(format!("`{}`: repetitions must be positive", s.id));
            }
            match (&s.technique, &s.primitive) {
                (TechniqueSpec::None, Some(_)) => return bad(format!("`{}`: technique none takes no primitive", s.id)),
                (t, None) if t.kind().is_some() => return bad(format!("`{}`: {} needs a primitive", s.id, t.name())),
                _ => {}
            }
        }
        Ok(())
    }

    pub fn repetitions_of(&self, spec: &ExperimentSpec) -> u32 {
        spec.repetitions.unwrap_or(self.repetitions)
    }
}

pub(crate) fn unix_now_ns() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64)
}

impl RunRecord {
    fn blank(spec: &ExperimentSpec, rep: u32) -> Self {
        RunRecord {
            spec_id: spec.id.clone(),
            rep,
            technique: spec.technique.name().to_owned(),
            primitive: spec.primitive.as_ref().map(ToString::to_string),
            workload: spec.workload.path.display().to_string(),
            wall_ns: 0,
            cpu_child_ns: None,
            cpu_tracer_ns: None,
            combined_cpu_ns: None,
            event_count: 0,
            expected_count: None,
            instr_count: None,
            truncated: false,
            exit_status: None,
            proc_before: None,
            proc_after: None,
            timestamp: unix_now_ns(),
            span_ns: (0, 0),
            external: false,
            native: false,
            contended: false,
            error: None,
        }
    }

    pub fn from_native(workload: &Path, run: &NativeRun) -> Self {
        RunRecord {
            spec_id: native_spec_id(workload),
            rep: 0,
            technique: "native".into(),
            primitive: None,
            workload: workload.display().to_string(),
            wall_ns: run.wall_ns,
            cpu_child_ns: Some(run.cpu_ns),
            cpu_tracer_ns: None,
            combined_cpu_ns: None,
            event_count: 0,
            expected_count: None,
            instr_count: None,
            truncated: false,
            exit_status: Some(run.exit_status),
            proc_before: None,
            proc_after: None,
            timestamp: unix_now_ns(),
            span_ns: run.span_ns,
            external: false,
            native: true,
            contended: false,
            error: None,
        }
    }
}

pub fn native_spec_id(workload: &Path) -> String {
    format!("native:{}", workload.display())
}

/// What the target must print and return for a run to be transparent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reference {
    pub stdout: Vec<u8>,
    pub exit_status: i32,
}

impl From<&NativeRun> for Reference {
    fn from(n: &NativeRun) -> Self {
        Reference { stdout: n.stdout.clone(), exit_status: n.exit_status }
    }
}

enum Armed {
    Nothing,
    Sw(SoftBreakpoint),
    Hw(Vec<HwSlot>),
    Page(PageTrap),
    Probe(ProbeSite),
    Step { cap: u64, filter: StepFilter },
}

impl Armed {
    fn arm(t: &mut TargetProcess, plan: &InstrumentationPlan) -> Result<Self, HarnessError> {
        let mut slots = Vec::new();
        let mut armed = Armed::Nothing;
        for action in &plan.actions {
            match action {
                ArmAction::SwBreakpoint { addr } => armed = Armed::Sw(arm_sw_breakpoint(t, *addr)?),
                ArmAction::HwSlot { addr, kind, len } => slots.push(arm_hw_slot(t, *addr, *kind, *len)?),
                ArmAction::PageTrap { range, access, cap } => {
                    let mut trap = protect_range(t, range.clone(), *access)?;
                    trap.cap = Some(*cap);
                    armed = Armed::Page(trap);
                }
                ArmAction::Probe { addr } => {
                    let site = plan_probe_site(t, *addr)?;
                    armed = Armed::Probe(inject_probe(t, &site)?);
                }
                ArmAction::StepDriver { cap, filter } => armed = Armed::Step { cap: *cap, filter: *filter },
            }
        }
        if !slots.is_empty() {
            armed = Armed::Hw(slots);
        }
        Ok(armed)
    }

    fn count(&self, t: &TargetProcess, stepped: u64) -> Result<u64, HarnessError> {
        Ok(match self {
            Armed::Nothing => 0,
            Armed::Sw(bp) => bp.hit_count,
            Armed::Hw(slots) => slots.iter().map(|s| s.hit_count).sum(),
            Armed::Page(trap) => trap.hit_count,
            Armed::Probe(site) => read_probe_counter(t, site)?,
            Armed::Step { .. } => stepped,
        })
    }

    fn disarm(&mut self, t: &mut TargetProcess) -> Result<(), HarnessError> {
        match self {
            Armed::Sw(bp) if bp.armed => disarm_sw_breakpoint(t, bp)?,
            Armed::Hw(slots) => {
                for s in slots.iter() {
                    clear_hw_slot(t, s)?;
                }
            }
            Armed::Page(trap) => teardown(t, trap)?,
            Armed::Probe(site) if site.active => {
                remove_probe(t, site)?;
            }
            _ => {}
        }
        Ok(())
    }
}

/// Window measurements for one traced run.
struct Window {
    event_count: u64,
    truncated: bool,
    clocks: crate::target::ClockSample,
    before: crate::target::ProcSnapshot,
    after: crate::target::ProcSnapshot,
}

/// Runs one repetition of a spec. `reference` is the native behaviour to
/// check against; when absent, generator metadata (or a fresh native run)
/// provides it.
pub fn run_experiment(
    spec: &ExperimentSpec,
    rep: u32,
    caps: &Caps,
    reference: Option<&Reference>,
) -> Result<RunRecord, HarnessError> {
    let meta = spec.workload.load_metadata()?;
    if let TechniqueSpec::External(template) = &spec.technique {
        // without a primitive there is nothing to compare the tool's count to
        let expected = spec.primitive.as_ref().and(expected_for(spec, meta.as_ref()));
        let mut rec = run_external(template, &spec.id, &spec.workload.path, rep, expected)?;
        rec.primitive = spec.primitive.as_ref().map(ToString::to_string);
        rec.instr_count = rec.instr_count.or(meta.as_ref().map(|m| m.params.total_instr));
        return Ok(rec);
    }
    if let (Some(k), Some(p)) = (spec.technique.kind(), &spec.primitive) {
        if capability(k, p.kind) == Capability::None {
            return Err(PlanError::Capability { technique: k, primitive: p.kind }.into());
        }
    }

    let reference = match (reference, &meta) {
        (Some(r), _) => r.clone(),
        (None, Some(m)) => Reference { stdout: m.expected_stdout.clone().into_bytes(), exit_status: 0 },
        (None, None) => Reference::from(&run_native(&spec.workload.path)?),
    };

    let mut rec = RunRecord::blank(spec, rep);
    let dir = tempfile::tempdir().map_err(|e| HarnessError::Config(format!("temp dir: {e}")))?;
    let out_path = dir.path().join("stdout");
    let out = File::create(&out_path).map_err(|e| HarnessError::Config(format!("{}: {e}", out_path.display())))?;
    let span_start = crate::target::monotonic_ns();
    let mut t = Launch::new(&spec.workload.path).stdout(out).stderr(Stdio::null()).spawn().map_err(HarnessError::Spawn)?;

    let outcome = traced_run(&mut t, spec, caps, meta.as_ref(), &mut rec);
    if outcome.is_err() {
        t.kill();
    }
    let (window, exit_status) = outcome?;
    rec.span_ns = (span_start, crate::target::monotonic_ns());

    rec.wall_ns = window.clocks.wall_ns;
    rec.cpu_child_ns = Some(window.clocks.cpu_child_ns);
    rec.cpu_tracer_ns = Some(window.clocks.cpu_tracer_ns);
    rec.combined_cpu_ns = Some(window.clocks.combined_cpu_ns());
    rec.event_count = window.event_count;
    rec.truncated = window.truncated;
    rec.exit_status = Some(exit_status);
    rec.proc_before = Some(window.before);
    rec.proc_after = Some(window.after);
    rec.instr_count = meta.as_ref().map(|m| m.params.total_instr);

    let stdout = std::fs::read(&out_path).map_err(|e| HarnessError::Config(format!("{}: {e}", out_path.display())))?;
    if exit_status != reference.exit_status {
        return Err(HarnessError::Transparency(format!(
            "exit status {exit_status}, native {}",
            reference.exit_status
        )));
    }
    if stdout != reference.stdout {
        return Err(HarnessError::Transparency(format!(
            "stdout {:?}, native {:?}",
            String::from_utf8_lossy(&stdout),
            String::from_utf8_lossy(&reference.stdout)
        )));
    }
    Ok(rec)
}

fn expected_for(spec: &ExperimentSpec, meta: Option<&WorkloadMetadata>) -> Option<u64> {
    let m = meta?;
    match &spec.primitive {
        None => Some(0),
        Some(p) => {
            let prim = p.resolve(|s| m.symbols.get(s).copied()).ok()?;
            expected_counts(m, &prim).ok()
        }
    }
}

fn window_anchor(t: &mut TargetProcess, meta: Option<&WorkloadMetadata>, names: &[&str]) -> Result<u64, HarnessError> {
    if let Some(m) = meta {
        return Ok(if names[0] == "main" { m.main_addr } else { m.exit_addr });
    }
    let mut last = None;
    for n in names {
        match t.resolve_symbol(n) {
            Ok(a) => return Ok(a),
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one name").into())
}

fn traced_run(
    t: &mut TargetProcess,
    spec: &ExperimentSpec,
    caps: &Caps,
    meta: Option<&WorkloadMetadata>,
    rec: &mut RunRecord,
) -> Result<(Window, i32), HarnessError> {
    let main = window_anchor(t, meta, &["main"])?;
    let exit = window_anchor(t, meta, &["prog_exit", "exit", "_exit"])?;
    run_to(t, main)?;

    let plan = match (spec.technique.kind(), &spec.primitive) {
        (Some(k), Some(p)) => {
            let prim = p.resolve(|s| meta.and_then(|m| m.symbols.get(s).copied()).or_else(|| t.resolve_symbol(s).ok()))?;
            if let Some(m) = meta {
                rec.expected_count = expected_counts(m, &prim).ok();
            }
            let opts = PlanOptions {
                hw_len: spec.hw_len.unwrap_or(8),
                multi_slot: spec.multi_slot,
                step_cap: caps.single_step,
                fault_cap: caps.page_fault,
            };
            Some(build_plan(&prim, k, &opts)?)
        }
        _ => {
            rec.expected_count = Some(0);
            None
        }
    };
    let mut armed = match &plan {
        Some(p) => Armed::arm(t, p)?,
        None => Armed::Nothing,
    };
    let mut exit_bp = arm_sw_breakpoint(t, exit)?;

    let before = t.snapshot_proc()?;
    let start = t.read_clocks()?;
    let (stepped, truncated) = event_loop(t, &mut armed, exit)?;
    let end = t.read_clocks()?;
    let after = t.snapshot_proc()?;
    let event_count = armed.count(t, stepped)?;

    armed.disarm(t)?;
    disarm_sw_breakpoint(t, &mut exit_bp)?;
    t.set_pc(exit)?;
    let status = finish(t)?;
    Ok((Window { event_count, truncated, clocks: start.elapsed_until(&end), before, after }, status))
}

/// Runs the window. Returns (events counted by the step driver, truncated)
/// with the target stopped at `exit` (pc possibly one past the trap byte).
fn event_loop(t: &mut TargetProcess, armed: &mut Armed, exit: u64) -> Result<(u64, bool), HarnessError> {
    let mut truncated = false;
    let mut stepped = 0;
    if let Armed::Step { cap, filter } = *armed {
        let mut classes: HashMap<u64, bool> = HashMap::new();
        let mut buf = [0u8; MAX_INSN_LEN];
        let report = drive_single_step(t, StepConfig { cap, stop_at: Some(exit) }, |obs, t| match filter {
            StepFilter::All => stepped += 1,
            StepFilter::Class(c) => {
                let hit = *classes.entry(obs.pc).or_insert_with(|| {
                    let n = (1..=MAX_INSN_LEN).rev().find(|&n| t.read_into(obs.pc, &mut buf[..n]).is_ok()).unwrap_or(0);
                    classify(&buf[..n]) == c
                });
                stepped += hit as u64;
            }
        })?;
        match report.end {
            StepEnd::ReachedStop => return Ok((stepped, false)),
            StepEnd::Cap => truncated = true,
            StepEnd::Event(ev) if ev.is_terminal() => return Err(HarnessError::EarlyExit(ev.kind)),
            StepEnd::Event(ev) => return Err(TrapError::UnexpectedStop(ev).into()),
        }
    }

    let mut deliver = None;
    let mut pending: Option<StopEvent> = None;
    loop {
        let ev = match pending.take() {
            Some(ev) => ev,
            None => t.resume_wait(ResumeMode::Continue, deliver.take())?,
        };
        match (ev.kind, &mut *armed) {
            (StopKind::BreakpointTrap, _) if ev.pc == exit + 1 => break,
            (StopKind::BreakpointTrap, Armed::Sw(bp)) if ev.pc == bp.addr + 1 => pending = handle_sw_hit(t, bp, &ev)?,
            (StopKind::HardwareTrap { hits }, Armed::Hw(slots)) => {
                record_hits(slots, hits);
            }
            (StopKind::AccessFault { .. }, Armed::Page(trap)) => {
                let (outcome, next) = handle_access_fault(t, trap, &ev)?;
                if outcome == FaultOutcome::Unrelated {
                    deliver = ev.passthrough_signal();
                }
                pending = next;
                if trap.armed && trap.cap_reached() {
                    teardown(t, trap)?;
                    truncated = true;
                }
            }
            (StopKind::Exited(_) | StopKind::Killed(_), _) => return Err(HarnessError::EarlyExit(ev.kind)),
            _ => deliver = ev.passthrough_signal(),
        }
    }
    Ok((stepped, truncated))
}

/// Lets the target run to completion, delivering its own signals.
fn finish(t: &mut TargetProcess) -> Result<i32, HarnessError> {
    let mut deliver = None;
    loop {
        let ev = t.resume_wait(ResumeMode::Continue, deliver.take())?;
        match ev.kind {
            StopKind::Exited(code) => return Ok(code),
            StopKind::Killed(sig) => return Ok(128 + sig),
            _ => deliver = ev.passthrough_signal(),
        }
    }
}

fn error_record(spec: &ExperimentSpec, rep: u32, err: &HarnessError) -> RunRecord {
    let mut rec = RunRecord::blank(spec, rep);
    rec.error = Some(err.to_string());
    rec
}

/// Runs every spec `repetitions` times. Failed runs become error records;
/// the matrix carries on. `sink` sees each record in deterministic order
/// (native references first).
pub fn run_matrix<F>(cfg: &ExperimentConfig, mut sink: F) -> Vec<RunRecord>
where
    F: FnMut(&RunRecord),
{
    let mut records = Vec::new();
    let mut refs: HashMap<PathBuf, Reference> = HashMap::new();
    let mut emit = |rec: RunRecord, records: &mut Vec<RunRecord>| {
        sink(&rec);
        records.push(rec);
    };

    if cfg.native_reference {
        let mut seen = BTreeSet::new();
        for s in cfg.specs.iter().filter(|s| !matches!(s.technique, TechniqueSpec::External(_))) {
            let path = &s.workload.path;
            if !seen.insert(path.clone()) {
                continue;
            }
            match run_native(path) {
                Ok(run) => {
                    refs.insert(path.clone(), Reference::from(&run));
                    emit(RunRecord::from_native(path, &run), &mut records);
                }
                Err(e) => {
                    let mut rec = RunRecord::blank(s, 0);
                    rec.spec_id = native_spec_id(path);
                    rec.technique = "native".into();
                    rec.primitive = None;
                    rec.native = true;
                    rec.error = Some(e.to_string());
                    emit(rec, &mut records);
                }
            }
        }
    }

    let jobs: Vec<(usize, u32)> = cfg
        .specs
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..cfg.repetitions_of(s)).map(move |r| (i, r)))
        .collect();
    let run_one = |(i, rep): (usize, u32)| {
        let s = &cfg.specs[i];
        run_experiment(s, rep, &cfg.caps, refs.get(&s.workload.path)).unwrap_or_else(|e| error_record(s, rep, &e))
    };

    if cfg.parallel <= 1 {
        for job in jobs {
            emit(run_one(job), &mut records);
        }
        return records;
    }

    let queue = Mutex::new(jobs.iter().copied().enumerate().collect::<VecDeque<_>>());
    let done = Mutex::new(Vec::with_capacity(jobs.len()));
    std::thread::scope(|scope| {
        for _ in 0..cfg.parallel {
            scope.spawn(|| loop {
                let Some((order, job)) = queue.lock().expect("queue lock").pop_front() else { break };
                let mut rec = run_one(job);
                rec.contended = true;
                done.lock().expect("results lock").push((order, rec));
            });
        }
    });
    let mut done = done.into_inner().expect("results lock");
    done.sort_by_key(|(order, _)| *order);
    for (_, rec) in done {
        emit(rec, &mut records);
    }
    records
}
