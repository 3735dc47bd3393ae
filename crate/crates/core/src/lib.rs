//! Trap- and probe-based dynamic binary instrumentation for Linux x86-64
//! processes, with a benchmark harness for comparing the cost of each
//! technique.
//!
//! Layout:
//! - [`target`]: spawn and control a traced process.
//! - [`trap`]: software/hardware breakpoints, single-stepping, page traps.
//! - [`probe`]: in-target trampolines that count executions.
//! - [`primitives`]: which technique can observe which event, and plans.
//! - [`workload`]: synthetic executables with exactly known event counts.
//! - [`harness`]: measured runs, repetition, record storage.
//! - [`analysis`]: statistics, regression, cutting points, reports.
//! - [`fixture`]: manifest format for external C fixture programs.

pub mod analysis;
pub mod decode;
pub mod fixture;
pub mod harness;
pub mod primitives;
pub mod probe;
pub mod target;
pub mod trap;
pub mod workload;

pub use decode::{InsnClass, MemAccess};
pub use target::{
    ClockSample, FaultAccess, Launch, MemoryRegion, Perms, ProcSnapshot, ProcessState, RegisterFile, ResumeMode,
    StopEvent, StopKind, TargetError, TargetProcess, PAGE_SIZE,
};
