//! Trap-based techniques: each one makes the CPU stop the target at the
//! event of interest, lets the tracer count it, and resumes transparently.

pub mod hw;
pub mod inject;
pub mod page;
pub mod step;
pub mod sw;

pub use hw::{arm_hw_slot, clear_hw_slot, HwKind, HwSlot, HW_SLOTS};
pub use inject::{inject_syscall, remote_mmap, remote_mprotect, remote_munmap};
pub use page::{handle_access_fault, protect_range, teardown, FaultOutcome, PageAccess, PageTrap, DEFAULT_FAULT_CAP};
pub use step::{drive_single_step, StepConfig, StepEnd, StepObservation, StepReport, DEFAULT_STEP_CAP};
pub use sw::{arm_sw_breakpoint, disarm_sw_breakpoint, handle_sw_hit, run_to, SoftBreakpoint, TRAP_OPCODE};

use crate::target::{StopEvent, TargetError};

#[derive(Debug, thiserror::Error)]
pub enum TrapError {
    #[error("a breakpoint is already armed at {0:#x}")]
    AlreadyArmed(u64),
    #[error("breakpoint at {0:#x} is not armed")]
    NotArmed(u64),
    #[error("trap at {pc:#x} does not belong to this breakpoint")]
    NotOurTrap { pc: u64 },
    #[error("all four debug-register slots are in use")]
    NoFreeSlot,
    #[error("unsupported watch length {len} for {kind:?}")]
    BadLength { kind: HwKind, len: u8 },
    #[error("address {addr:#x} is not aligned to {len}")]
    BadAlignment { addr: u64, len: u8 },
    #[error("overlapping instrumentation: {0}")]
    OverlappingTrap(String),
    #[error("syscall injection: {0}")]
    Inject(String),
    #[error("unexpected stop {0:?}")]
    UnexpectedStop(StopEvent),
    #[error(transparent)]
    Target(#[from] TargetError),
}

pub type Result<T, E = TrapError> = std::result::Result<T, E>;
