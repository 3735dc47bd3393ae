use crate::target::{ResumeMode, StopEvent, StopKind, TargetProcess};

use super::Result;

pub const DEFAULT_STEP_CAP: u64 = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepConfig {
    pub cap: u64,
    /// Stop (without executing it) when the next instruction is here.
    pub stop_at: Option<u64>,
}

impl Default for StepConfig {
    fn default() -> Self {
        StepConfig { cap: DEFAULT_STEP_CAP, stop_at: None }
    }
}

/// The instruction about to be stepped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepObservation {
    pub pc: u64,
    pub first_byte: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEnd {
    Cap,
    ReachedStop,
    /// A step ended in something other than a plain single-step trap.
    Event(StopEvent),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepReport {
    pub steps_executed: u64,
    pub truncated: bool,
    pub cap: u64,
    pub end: StepEnd,
}

/// Steps the target one instruction at a time, calling `observer` before
/// each instruction, until the cap, `stop_at`, or a non-step stop.
pub fn drive_single_step<F>(t: &mut TargetProcess, cfg: StepConfig, mut observer: F) -> Result<StepReport>
where
    F: FnMut(&StepObservation, &TargetProcess),
{
    let mut steps = 0u64;
    let mut pc = t.pc()?;
    let mut byte = [0u8; 1];
    let end = loop {
        if cfg.stop_at == Some(pc) {
            break StepEnd::ReachedStop;
        }
        if steps == cfg.cap {
            break StepEnd::Cap;
        }
        t.read_into(pc, &mut byte)?;
        observer(&StepObservation { pc, first_byte: byte[0] }, t);
        let ev = t.resume_wait(ResumeMode::Step, None)?;
        steps += 1;
        if ev.kind != StopKind::SingleStep {
            break StepEnd::Event(ev);
        }
        pc = ev.pc;
    };
    Ok(StepReport { steps_executed: steps, truncated: end == StepEnd::Cap, cap: cfg.cap, end })
}
