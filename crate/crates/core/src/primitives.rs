//! Instrumentation primitives, the technique capability matrix, and plans
//! that turn a (primitive, technique) pair into concrete arming actions.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::InsnClass;
use crate::trap::{HwKind, PageAccess, DEFAULT_FAULT_CAP, DEFAULT_STEP_CAP};

/// An observable event class, with its resolved target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Primitive {
    ExecSingle(u64),
    ExecRange(Range<u64>),
    ExecAll,
    ExecType(InsnClass),
    RwSingle(u64),
    RwRange(Range<u64>),
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::ExecSingle(_) => PrimitiveKind::ExecSingle,
            Primitive::ExecRange(_) => PrimitiveKind::ExecRange,
            Primitive::ExecAll => PrimitiveKind::ExecAll,
            Primitive::ExecType(_) => PrimitiveKind::ExecType,
            Primitive::RwSingle(_) => PrimitiveKind::RwSingle,
            Primitive::RwRange(_) => PrimitiveKind::RwRange,
        }
    }
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::ExecSingle(a) => write!(f, "exec_single({a:#x})"),
            Primitive::ExecRange(r) => write!(f, "exec_range({:#x}..{:#x})", r.start, r.end),
            Primitive::ExecAll => f.write_str("exec_all"),
            Primitive::ExecType(c) => write!(f, "exec_type({c})"),
            Primitive::RwSingle(a) => write!(f, "rw_single({a:#x})"),
            Primitive::RwRange(r) => write!(f, "rw_range({:#x}..{:#x})", r.start, r.end),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrimitiveKind {
    ExecSingle,
    ExecRange,
    ExecAll,
    ExecType,
    RwSingle,
    RwRange,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 6] = [
        PrimitiveKind::ExecSingle,
        PrimitiveKind::ExecRange,
        PrimitiveKind::ExecAll,
        PrimitiveKind::ExecType,
        PrimitiveKind::RwSingle,
        PrimitiveKind::RwRange,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PrimitiveKind::ExecSingle => "exec_single",
            PrimitiveKind::ExecRange => "exec_range",
            PrimitiveKind::ExecAll => "exec_all",
            PrimitiveKind::ExecType => "exec_type",
            PrimitiveKind::RwSingle => "rw_single",
            PrimitiveKind::RwRange => "rw_range",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PrimitiveKind::ExecSingle => "Execution of single instruction",
            PrimitiveKind::ExecRange => "Execution of instruction range",
            PrimitiveKind::ExecAll => "Execution of all instructions",
            PrimitiveKind::ExecType => "Execution of instruction type",
            PrimitiveKind::RwSingle => "Memory R/W at single address",
            PrimitiveKind::RwRange => "Memory R/W at address range",
        }
    }

    fn row(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PrimitiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PrimitiveKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        PrimitiveKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| format!("unknown primitive `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TechniqueKind {
    Dpi,
    SwBreakpoint,
    HwBreakpoint,
    SingleStep,
    PageFault,
}

impl TechniqueKind {
    pub const ALL: [TechniqueKind; 5] = [
        TechniqueKind::Dpi,
        TechniqueKind::SwBreakpoint,
        TechniqueKind::HwBreakpoint,
        TechniqueKind::SingleStep,
        TechniqueKind::PageFault,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TechniqueKind::Dpi => "dpi",
            TechniqueKind::SwBreakpoint => "sw_breakpoint",
            TechniqueKind::HwBreakpoint => "hw_breakpoint",
            TechniqueKind::SingleStep => "single_step",
            TechniqueKind::PageFault => "page_fault",
        }
    }

    /// Column heading in the capability table.
    pub fn short(self) -> &'static str {
        match self {
            TechniqueKind::Dpi => "DPI",
            TechniqueKind::SwBreakpoint => "SW-bp",
            TechniqueKind::HwBreakpoint => "HW-bp",
            TechniqueKind::SingleStep => "Step",
            TechniqueKind::PageFault => "PF",
        }
    }

    fn col(self) -> usize {
        self as usize
    }
}

impl fmt::Display for TechniqueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TechniqueKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.replace('-', "_");
        TechniqueKind::ALL
            .into_iter()
            .find(|k| k.as_str() == norm || k.short().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown technique `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Capability {
    Full,
    Partial(&'static str),
    None,
}

impl Capability {
    pub fn symbol(self) -> char {
        match self {
            Capability::Full => '✓',
            Capability::Partial(_) => '◐',
            Capability::None => '✗',
        }
    }

    pub fn level(self) -> &'static str {
        match self {
            Capability::Full => "full",
            Capability::Partial(_) => "partial",
            Capability::None => "none",
        }
    }

    pub fn note(self) -> Option<&'static str> {
        match self {
            Capability::Partial(n) => Some(n),
            _ => None,
        }
    }
}

const PAGE_FILTER: &str = "page granularity + filter";
const RANGED_HW: &str = "ranged hardware breakpoints (PowerPC only; unavailable on x86-64)";
const STEP_FILTER: &str = "opcode filter on every stepped instruction";

use Capability::{Full as Y, None as N, Partial as P};

/// Rows follow [`PrimitiveKind::ALL`], columns [`TechniqueKind::ALL`].
pub const CAPABILITY_MATRIX: [[Capability; 5]; 6] = [
    // DPI    SW    HW             Step            PF
    [Y, Y, Y, N, P(PAGE_FILTER)],
    [N, N, P(RANGED_HW), N, Y],
    [N, N, N, Y, N],
    [N, N, N, P(STEP_FILTER), N],
    [N, N, Y, N, P(PAGE_FILTER)],
    [N, N, P(RANGED_HW), N, Y],
];

pub fn capability(tech: TechniqueKind, prim: PrimitiveKind) -> Capability {
    CAPABILITY_MATRIX[prim.row()][tech.col()]
}

/// The matrix as a fixed-layout text table.
pub fn capability_table() -> String {
    let mut out = format!("{:<34}", "Primitive");
    for t in TechniqueKind::ALL {
        out.push_str(&format!("{:>7}", t.short()));
    }
    out.push('\n');
    for p in PrimitiveKind::ALL {
        out.push_str(&format!("{:<34}", p.label()));
        for t in TechniqueKind::ALL {
            out.push_str(&format!("{:>7}", capability(t, p).symbol()));
        }
        out.push('\n');
    }
    out
}

/// One machine-readable row per matrix cell: `primitive technique level [note]`.
pub fn capability_rows() -> Vec<(PrimitiveKind, TechniqueKind, Capability)> {
    PrimitiveKind::ALL
        .into_iter()
        .flat_map(|p| TechniqueKind::ALL.into_iter().map(move |t| (p, t, capability(t, p))))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PlanOptions {
    /// Watch length for hardware data slots.
    pub hw_len: u8,
    /// Cover small data ranges with up to four hardware slots.
    pub multi_slot: bool,
    pub step_cap: u64,
    pub fault_cap: u64,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions { hw_len: 8, multi_slot: false, step_cap: DEFAULT_STEP_CAP, fault_cap: DEFAULT_FAULT_CAP }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepFilter {
    All,
    Class(InsnClass),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArmAction {
    SwBreakpoint { addr: u64 },
    HwSlot { addr: u64, kind: HwKind, len: u8 },
    PageTrap { range: Range<u64>, access: PageAccess, cap: u64 },
    Probe { addr: u64 },
    StepDriver { cap: u64, filter: StepFilter },
}

/// Where the event count is read from when the window closes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CounterBinding {
    BreakpointHits,
    SlotHits,
    CountedFaults,
    ProbeCounter,
    StepObserver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstrumentationPlan {
    pub primitive: Primitive,
    pub technique: TechniqueKind,
    pub capability: Capability,
    pub actions: Vec<ArmAction>,
    pub counter: CounterBinding,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("{technique} cannot observe {primitive}")]
    Capability { technique: TechniqueKind, primitive: PrimitiveKind },
    #[error("{0}")]
    Platform(String),
    #[error("invalid primitive: {0}")]
    Invalid(String),
}

/// Turns a request into arming actions. Errors exactly where the matrix has
/// no capability, and for partial entries this platform cannot provide.
pub fn build_plan(prim: &Primitive, tech: TechniqueKind, opts: &PlanOptions) -> Result<InstrumentationPlan, PlanError> {
    use ArmAction as A;
    use TechniqueKind as T;

    let cap = capability(tech, prim.kind());
    if cap == Capability::None {
        return Err(PlanError::Capability { technique: tech, primitive: prim.kind() });
    }
    if let Primitive::ExecRange(r) | Primitive::RwRange(r) = prim {
        if r.is_empty() {
            return Err(PlanError::Invalid(format!("empty range {:#x}..{:#x}", r.start, r.end)));
        }
    }
    let (actions, counter) = match (prim, tech) {
        (Primitive::ExecSingle(a), T::Dpi) => (vec![A::Probe { addr: *a }], CounterBinding::ProbeCounter),
        (Primitive::ExecSingle(a), T::SwBreakpoint) => (vec![A::SwBreakpoint { addr: *a }], CounterBinding::BreakpointHits),
        (Primitive::ExecSingle(a), T::HwBreakpoint) => {
            (vec![A::HwSlot { addr: *a, kind: HwKind::Exec, len: 1 }], CounterBinding::SlotHits)
        }
        (Primitive::ExecSingle(a), T::PageFault) => (
            vec![A::PageTrap { range: *a..*a + 1, access: PageAccess::Exec, cap: opts.fault_cap }],
            CounterBinding::CountedFaults,
        ),
        (Primitive::ExecRange(r), T::PageFault) => (
            vec![A::PageTrap { range: r.clone(), access: PageAccess::Exec, cap: opts.fault_cap }],
            CounterBinding::CountedFaults,
        ),
        (Primitive::ExecAll, T::SingleStep) => {
            (vec![A::StepDriver { cap: opts.step_cap, filter: StepFilter::All }], CounterBinding::StepObserver)
        }
        (Primitive::ExecType(c), T::SingleStep) => {
            (vec![A::StepDriver { cap: opts.step_cap, filter: StepFilter::Class(*c) }], CounterBinding::StepObserver)
        }
        (Primitive::RwSingle(a), T::HwBreakpoint) => (
            vec![A::HwSlot { addr: *a, kind: HwKind::ReadWrite, len: opts.hw_len }],
            CounterBinding::SlotHits,
        ),
        (Primitive::RwSingle(a), T::PageFault) => (
            vec![A::PageTrap { range: *a..*a + 1, access: PageAccess::ReadWrite, cap: opts.fault_cap }],
            CounterBinding::CountedFaults,
        ),
        (Primitive::RwRange(r), T::PageFault) => (
            vec![A::PageTrap { range: r.clone(), access: PageAccess::ReadWrite, cap: opts.fault_cap }],
            CounterBinding::CountedFaults,
        ),
        (Primitive::RwRange(r), T::HwBreakpoint) if opts.multi_slot => {
            (multi_slot_cover(r)?, CounterBinding::SlotHits)
        }
        (Primitive::ExecRange(_) | Primitive::RwRange(_), T::HwBreakpoint) => {
            return Err(PlanError::Platform(format!("{RANGED_HW}; multi-slot emulation is opt-in for rw_range")))
        }
        (p, t) => unreachable!("matrix allows {p} under {t} but no plan exists"),
    };
    Ok(InstrumentationPlan { primitive: prim.clone(), technique: tech, capability: cap, actions, counter })
}

/// Up to four aligned 8-byte read/write slots covering `r`.
fn multi_slot_cover(r: &Range<u64>) -> Result<Vec<ArmAction>, PlanError> {
    let lo = r.start & !7;
    let hi = (r.end + 7) & !7;
    let n = (hi - lo) / 8;
    if n > crate::trap::HW_SLOTS as u64 {
        return Err(PlanError::Platform(format!("{} bytes need {n} slots; only 4 exist", r.end - r.start)));
    }
    Ok((0..n).map(|i| ArmAction::HwSlot { addr: lo + 8 * i, kind: HwKind::ReadWrite, len: 8 }).collect())
}

/// A primitive whose target is still symbolic, as written in configs and on
/// the command line.
///
/// Target syntax: `symbol`, `0xADDR`, `symbol+0x10`; ranges as
/// `<target>..<target>` or `<target>:<len>`; for `exec_type` an instruction
/// class name such as `branch`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrimitiveSpec {
    pub kind: PrimitiveKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target: Option<String>,
}

impl fmt::Display for PrimitiveSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.target {
            Some(t) => write!(f, "{}({t})", self.kind),
            None => write!(f, "{}", self.kind),
        }
    }
}

fn parse_num(s: &str) -> Option<u64> {
    let s = s.trim();
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Resolves `sym`, `0xADDR` or `sym+off` through `lookup`.
pub fn resolve_address<F>(expr: &str, lookup: &mut F) -> Result<u64, PlanError>
where
    F: FnMut(&str) -> Option<u64>,
{
    let expr = expr.trim();
    if let Some(n) = parse_num(expr) {
        return Ok(n);
    }
    let (sym, off) = match expr.split_once('+') {
        Some((s, o)) => (s.trim(), parse_num(o).ok_or_else(|| PlanError::Invalid(format!("bad offset in `{expr}`")))?),
        None => (expr, 0),
    };
    lookup(sym).map(|a| a + off).ok_or_else(|| PlanError::Invalid(format!("unknown symbol `{sym}`")))
}

impl PrimitiveSpec {
    pub fn new(kind: PrimitiveKind, target: Option<&str>) -> Self {
        PrimitiveSpec { kind, target: target.map(str::to_owned) }
    }

    pub fn resolve<F>(&self, mut lookup: F) -> Result<Primitive, PlanError>
    where
        F: FnMut(&str) -> Option<u64>,
    {
        let target = || self.target.as_deref().ok_or_else(|| PlanError::Invalid(format!("{} needs a target", self.kind)));
        let range = |lookup: &mut F| -> Result<Range<u64>, PlanError> {
            let t = target()?;
            if let Some((a, b)) = t.split_once("..") {
                Ok(resolve_address(a, lookup)?..resolve_address(b, lookup)?)
            } else if let Some((a, len)) = t.rsplit_once(':') {
                let start = resolve_address(a, lookup)?;
                let len = parse_num(len).ok_or_else(|| PlanError::Invalid(format!("bad length in `{t}`")))?;
                Ok(start..start + len)
            } else {
                Err(PlanError::Invalid(format!("`{t}` is not a range (use a..b or a:len)")))
            }
        };
        Ok(match self.kind {
            PrimitiveKind::ExecSingle => Primitive::ExecSingle(resolve_address(target()?, &mut lookup)?),
            PrimitiveKind::ExecRange => Primitive::ExecRange(range(&mut lookup)?),
            PrimitiveKind::ExecAll => Primitive::ExecAll,
            PrimitiveKind::ExecType => Primitive::ExecType(target()?.parse().map_err(PlanError::Invalid)?),
            PrimitiveKind::RwSingle => Primitive::RwSingle(resolve_address(target()?, &mut lookup)?),
            PrimitiveKind::RwRange => Primitive::RwRange(range(&mut lookup)?),
        })
    }
}
