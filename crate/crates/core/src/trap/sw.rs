use crate::target::{page_floor, ResumeMode, StopEvent, StopKind, TargetError, TargetProcess};

use super::{Result, TrapError};

/// `int3`
pub const TRAP_OPCODE: u8 = 0xCC;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SoftBreakpoint {
    pub addr: u64,
    pub saved_byte: u8,
    pub armed: bool,
    pub hit_count: u64,
}

pub fn arm_sw_breakpoint(t: &mut TargetProcess, addr: u64) -> Result<SoftBreakpoint> {
    if t.occupancy().sw_breakpoints.contains(&addr) {
        return Err(TrapError::AlreadyArmed(addr));
    }
    if t.occupancy().trapped_pages.contains_key(&page_floor(addr)) {
        return Err(TrapError::OverlappingTrap(format!("page of {addr:#x} is page-trapped")));
    }
    if t.occupancy().probe_windows.iter().any(|w| w.contains(&addr)) {
        return Err(TrapError::OverlappingTrap(format!("{addr:#x} is inside a probe window")));
    }
    match t.region_containing(addr)? {
        Some(r) if r.perms.exec => {}
        _ => {
            return Err(TargetError::Memory { addr, len: 1, reason: "not mapped executable".into() }.into());
        }
    }
    let saved_byte = t.read_memory(addr, 1)?[0];
    t.write_memory(addr, &[TRAP_OPCODE])?;
    t.occupancy_mut().sw_breakpoints.insert(addr);
    Ok(SoftBreakpoint { addr, saved_byte, armed: true, hit_count: 0 })
}

pub fn disarm_sw_breakpoint(t: &mut TargetProcess, bp: &mut SoftBreakpoint) -> Result<()> {
    if !bp.armed {
        return Err(TrapError::NotArmed(bp.addr));
    }
    t.write_memory(bp.addr, &[bp.saved_byte])?;
    t.occupancy_mut().sw_breakpoints.remove(&bp.addr);
    bp.armed = false;
    Ok(())
}

/// Counts a hit and steps the original instruction, leaving the breakpoint
/// re-armed. Returns the step's stop if it was anything but a plain step
/// (for example the process exiting).
pub fn handle_sw_hit(t: &mut TargetProcess, bp: &mut SoftBreakpoint, ev: &StopEvent) -> Result<Option<StopEvent>> {
    if ev.kind != StopKind::BreakpointTrap || ev.pc != bp.addr + 1 || !bp.armed {
        return Err(TrapError::NotOurTrap { pc: ev.pc });
    }
    bp.hit_count += 1;
    t.set_pc(bp.addr)?;
    t.write_memory(bp.addr, &[bp.saved_byte])?;
    let step = t.resume_wait(ResumeMode::Step, None)?;
    if step.is_terminal() {
        bp.armed = false;
        t.occupancy_mut().sw_breakpoints.remove(&bp.addr);
        return Ok(Some(step));
    }
    t.write_memory(bp.addr, &[TRAP_OPCODE])?;
    Ok((step.kind != StopKind::SingleStep).then_some(step))
}

/// Runs the target until it is about to execute `addr`, using a temporary
/// breakpoint. Signals met on the way are delivered to the target.
pub fn run_to(t: &mut TargetProcess, addr: u64) -> Result<StopEvent> {
    let mut bp = arm_sw_breakpoint(t, addr)?;
    let mut deliver = None;
    let outcome = loop {
        let ev = match t.resume_wait(crate::target::ResumeMode::Continue, deliver.take()) {
            Ok(ev) => ev,
            Err(e) => break Err(e.into()),
        };
        match ev.kind {
            StopKind::BreakpointTrap if ev.pc == addr + 1 => break Ok(ev),
            _ if ev.is_terminal() => break Err(TrapError::UnexpectedStop(ev)),
            _ => deliver = ev.passthrough_signal(),
        }
    };
    if !t.state().is_terminal() {
        disarm_sw_breakpoint(t, &mut bp)?;
    }
    let ev = outcome?;
    t.set_pc(addr)?;
    Ok(StopEvent { kind: ev.kind, pc: addr })
}
