//! Page-permission traps: strip access bits so touching the page faults,
//! then restore, step the faulting instruction, and strip again.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::target::{page_ceil, page_floor, Perms, ResumeMode, StopEvent, StopKind, TargetError, TargetProcess, PAGE_SIZE};

use super::inject::remote_mprotect;
use super::{Result, TrapError};

pub const DEFAULT_FAULT_CAP: u64 = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageAccess {
    /// Strip execute only.
    Exec,
    /// Strip read and write.
    ReadWrite,
}

impl PageAccess {
    fn strip(self, p: Perms) -> Perms {
        match self {
            PageAccess::Exec => Perms { exec: false, ..p },
            PageAccess::ReadWrite => Perms { read: false, write: false, ..p },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaultOutcome {
    /// Fault inside a watched range.
    Counted,
    /// Fault on a trapped page but outside every watched range.
    Transparent,
    /// Not ours; the signal belongs to the target.
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PageTrap {
    /// Page base -> permissions before trapping.
    pub pages: BTreeMap<u64, Perms>,
    pub watched_ranges: Vec<Range<u64>>,
    pub access: PageAccess,
    pub hit_count: u64,
    pub fault_total: u64,
    /// Counted faults after which the caller should tear the trap down.
    pub cap: Option<u64>,
    pub armed: bool,
}

impl PageTrap {
    pub fn cap_reached(&self) -> bool {
        self.cap.is_some_and(|c| self.hit_count >= c)
    }

    pub fn watches(&self, addr: u64) -> bool {
        self.watched_ranges.iter().any(|r| r.contains(&addr))
    }
}

pub fn protect_range(t: &mut TargetProcess, range: Range<u64>, access: PageAccess) -> Result<PageTrap> {
    if range.is_empty() {
        return Err(TargetError::Memory { addr: range.start, len: 0, reason: "empty range".into() }.into());
    }
    let mut pages = BTreeMap::new();
    let mut page = page_floor(range.start);
    while page < page_ceil(range.end) {
        let occ = t.occupancy();
        if occ.trapped_pages.contains_key(&page) {
            return Err(TrapError::OverlappingTrap(format!("page {page:#x} is already trapped")));
        }
        if occ.page_has_breakpoint(page) {
            return Err(TrapError::OverlappingTrap(format!("page {page:#x} holds a software breakpoint")));
        }
        let region = t.region_containing(page)?.ok_or_else(|| TargetError::Memory {
            addr: page,
            len: PAGE_SIZE as usize,
            reason: "not mapped".into(),
        })?;
        pages.insert(page, region.perms);
        page += PAGE_SIZE;
    }
    let mut trap = PageTrap {
        pages,
        watched_ranges: vec![range],
        access,
        hit_count: 0,
        fault_total: 0,
        cap: None,
        armed: false,
    };
    let to_strip: Vec<(u64, Perms)> = trap.pages.iter().map(|(&p, &perms)| (p, perms)).collect();
    for (page, perms) in to_strip {
        t.occupancy_mut().trapped_pages.insert(page, access == PageAccess::Exec);
        if let Err(e) = remote_mprotect(t, page, PAGE_SIZE, access.strip(perms).to_prot()) {
            trap.armed = true;
            let _ = teardown(t, &mut trap);
            return Err(e);
        }
    }
    trap.armed = true;
    Ok(trap)
}

pub fn teardown(t: &mut TargetProcess, trap: &mut PageTrap) -> Result<()> {
    if !trap.armed {
        return Ok(());
    }
    let mut first_err = None;
    let pages: Vec<(u64, Perms)> = trap.pages.iter().map(|(&p, &perms)| (p, perms)).collect();
    for (page, perms) in pages {
        if !t.occupancy().trapped_pages.contains_key(&page) {
            continue;
        }
        match remote_mprotect(t, page, PAGE_SIZE, perms.to_prot()) {
            Ok(()) => {
                t.occupancy_mut().trapped_pages.remove(&page);
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    trap.armed = false;
    first_err.map_or(Ok(()), Err)
}

/// Handles an access fault. For trap-owned faults the faulting instruction
/// is executed with the page(s) restored, then the trap is re-applied.
/// Returns the outcome and, if the step stopped for another reason, that
/// stop.
pub fn handle_access_fault(
    t: &mut TargetProcess,
    trap: &mut PageTrap,
    ev: &StopEvent,
) -> Result<(FaultOutcome, Option<StopEvent>)> {
    let StopKind::AccessFault { fault_addr, .. } = ev.kind else {
        return Err(TrapError::UnexpectedStop(*ev));
    };
    if !trap.armed || !trap.pages.contains_key(&page_floor(fault_addr)) {
        return Ok((FaultOutcome::Unrelated, None));
    }
    trap.fault_total += 1;
    let outcome = if trap.watches(fault_addr) {
        trap.hit_count += 1;
        FaultOutcome::Counted
    } else {
        FaultOutcome::Transparent
    };

    // an instruction spanning two trapped pages faults once per page
    let mut restored = BTreeSet::new();
    let mut fault_page = page_floor(fault_addr);
    let pending = loop {
        remote_mprotect(t, fault_page, PAGE_SIZE, trap.pages[&fault_page].to_prot())?;
        restored.insert(fault_page);
        let step = t.resume_wait(ResumeMode::Step, None)?;
        match step.kind {
            StopKind::SingleStep => break None,
            StopKind::AccessFault { fault_addr: a, .. }
                if trap.pages.contains_key(&page_floor(a)) && !restored.contains(&page_floor(a)) =>
            {
                fault_page = page_floor(a);
            }
            _ => break Some(step),
        }
    };
    if pending.is_some_and(|p| p.is_terminal()) {
        return Ok((outcome, pending));
    }
    for page in restored {
        remote_mprotect(t, page, PAGE_SIZE, trap.access.strip(trap.pages[&page]).to_prot())?;
    }
    Ok((outcome, pending))
}
