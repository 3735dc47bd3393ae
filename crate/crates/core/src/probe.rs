//! Dynamic probe injection: the first instructions at a site are moved into
//! an in-target stub that bumps a counter, and the site jumps to the stub.
//!
//! Stub layout (one anonymous RWX page within ±2 GiB of the site):
//!
//! ```text
//! +0x000  lea rsp,[rsp-128]; pushfq; push 15 GPRs
//!         mov rax, counter; inc qword [rax]
//!         pop 15 GPRs; popfq; lea rsp,[rsp+128]
//!         <displaced instructions>
//!         jmp site+displaced_len
//! +0x800  u64 counter
//! ```

use std::ops::Range;

use crate::decode::{decode, InsnClass, MAX_INSN_LEN};
use crate::target::{page_floor, TargetError, TargetProcess, PAGE_SIZE};
use crate::trap::{remote_mmap, remote_munmap, TrapError};

pub const JMP_REL32_LEN: usize = 5;
const COUNTER_OFFSET: u64 = 0x800;
const REL32_REACH: i64 = i32::MAX as i64 - PAGE_SIZE as i64;
const MIN_MAP_ADDR: u64 = 0x10000;

#[derive(Debug, thiserror::Error)]
pub enum ProbeError {
    #[error("cannot probe {addr:#x}: {reason}")]
    UnsupportedSite { addr: u64, reason: String },
    #[error("probe stub: {0}")]
    Inject(String),
    #[error("pc {pc:#x} is inside the probe window or stub")]
    PcInWindow { pc: u64 },
    #[error("probe is not active")]
    Inactive,
    #[error(transparent)]
    Trap(#[from] TrapError),
    #[error(transparent)]
    Target(#[from] TargetError),
}

pub type Result<T, E = ProbeError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbePlan {
    pub addr: u64,
    pub displaced_len: usize,
    pub displaced_bytes: Vec<u8>,
    /// End offset of each displaced instruction.
    pub insn_boundaries: Vec<usize>,
}

impl ProbePlan {
    pub fn window(&self) -> Range<u64> {
        self.addr..self.addr + self.displaced_len as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeSite {
    pub plan: ProbePlan,
    pub stub_addr: u64,
    pub counter_addr: u64,
    pub active: bool,
}

/// Plans the displaced-instruction window for a probe at `addr`.
pub fn plan_probe_site(t: &mut TargetProcess, addr: u64) -> Result<ProbePlan> {
    let unsupported = |reason: String| ProbeError::UnsupportedSite { addr, reason };
    let region = t.region_containing(addr)?.ok_or_else(|| unsupported("not mapped".into()))?;
    if !region.perms.exec {
        return Err(unsupported("not executable".into()));
    }
    let avail = (region.end - addr).min(2 * MAX_INSN_LEN as u64) as usize;
    let bytes = t.read_memory(addr, avail)?;

    let mut boundaries = Vec::new();
    let mut len = 0;
    while len < JMP_REL32_LEN {
        let d = decode(&bytes[len..]).map_err(|e| unsupported(format!("at +{len}: {e}")))?;
        if d.rip_relative {
            return Err(unsupported(format!("pc-relative operand at +{len}")));
        }
        if d.class.is_control_transfer() || matches!(d.class, InsnClass::Trap | InsnClass::Syscall) {
            return Err(unsupported(format!("{} instruction at +{len}", d.class)));
        }
        len += d.len;
        boundaries.push(len);
    }
    let window = addr..addr + len as u64;
    let occ = t.occupancy();
    if occ.probe_windows.iter().any(|w| w.start < window.end && window.start < w.end) {
        return Err(unsupported("overlaps an existing probe".into()));
    }
    if occ.sw_breakpoints.range(window.clone()).next().is_some() {
        return Err(unsupported("overlaps a software breakpoint".into()));
    }
    Ok(ProbePlan { addr, displaced_len: len, displaced_bytes: bytes[..len].to_vec(), insn_boundaries: boundaries })
}

fn rel32(from_next: u64, to: u64) -> Option<[u8; 4]> {
    i32::try_from(to as i64 - from_next as i64).ok().map(i32::to_le_bytes)
}

/// Machine code for the stub, to be placed at `stub`.
pub fn build_stub(plan: &ProbePlan, stub: u64) -> Option<Vec<u8>> {
    const PUSH: [&[u8]; 15] = [
        &[0x50], &[0x51], &[0x52], &[0x53], &[0x55], &[0x56], &[0x57],
        &[0x41, 0x50], &[0x41, 0x51], &[0x41, 0x52], &[0x41, 0x53],
        &[0x41, 0x54], &[0x41, 0x55], &[0x41, 0x56], &[0x41, 0x57],
    ];
    let mut c = Vec::with_capacity(128);
    c.extend_from_slice(&[0x48, 0x8D, 0x64, 0x24, 0x80]); // lea rsp,[rsp-128]
    c.push(0x9C); // pushfq
    for p in PUSH {
        c.extend_from_slice(p);
    }
    c.extend_from_slice(&[0x48, 0xB8]); // mov rax, imm64
    c.extend_from_slice(&(stub + COUNTER_OFFSET).to_le_bytes());
    c.extend_from_slice(&[0x48, 0xFF, 0x00]); // inc qword [rax]
    for p in PUSH.iter().rev() {
        // pop = push opcode + 8
        let mut b = p.to_vec();
        *b.last_mut().expect("non-empty") += 8;
        c.extend_from_slice(&b);
    }
    c.push(0x9D); // popfq
    c.extend_from_slice(&[0x48, 0x8D, 0xA4, 0x24, 0x80, 0, 0, 0]); // lea rsp,[rsp+128]
    c.extend_from_slice(&plan.displaced_bytes);
    c.push(0xE9);
    let next = stub + c.len() as u64 + 4;
    c.extend_from_slice(&rel32(next, plan.addr + plan.displaced_len as u64)?);
    (c.len() as u64 <= COUNTER_OFFSET).then_some(c)
}

/// A free page-aligned address within rel32 reach of `site`.
fn find_stub_slot(t: &mut TargetProcess, site: u64) -> Result<u64> {
    let regions: Vec<(u64, u64)> = t.memory_map()?.iter().map(|r| (r.start, r.end)).collect();
    let reachable = |a: u64| (a as i64 - site as i64).abs() < REL32_REACH && (a + PAGE_SIZE) as i64 - (site as i64) < REL32_REACH;
    let mut gaps = Vec::new();
    let mut prev_end = MIN_MAP_ADDR;
    for &(start, end) in &regions {
        if start >= prev_end + PAGE_SIZE {
            gaps.push((prev_end, start));
        }
        prev_end = prev_end.max(end);
    }
    // gaps below the site, nearest first, then gaps above
    let below = gaps.iter().rev().filter(|g| g.1 <= site).map(|g| g.1 - PAGE_SIZE);
    let above = gaps.iter().filter(|g| g.0 > site).map(|g| g.0);
    below
        .chain(above)
        .find(|&a| reachable(a))
        .ok_or_else(|| ProbeError::Inject(format!("no free page within ±2 GiB of {site:#x}")))
}

pub fn inject_probe(t: &mut TargetProcess, plan: &ProbePlan) -> Result<ProbeSite> {
    let pc = t.pc()?;
    if pc > plan.addr && pc < plan.addr + plan.displaced_len as u64 {
        return Err(ProbeError::PcInWindow { pc });
    }
    let current = t.read_memory(plan.addr, plan.displaced_len)?;
    if current != plan.displaced_bytes {
        return Err(ProbeError::UnsupportedSite { addr: plan.addr, reason: "bytes changed since planning".into() });
    }
    let want = find_stub_slot(t, page_floor(plan.addr))?;
    let prot = libc::PROT_READ | libc::PROT_WRITE | libc::PROT_EXEC;
    let flags = libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_FIXED_NOREPLACE;
    let stub = remote_mmap(t, want, PAGE_SIZE, prot, flags)?;
    if stub != want {
        let _ = remote_munmap(t, stub, PAGE_SIZE);
        return Err(ProbeError::Inject(format!("kernel placed stub at {stub:#x}, wanted {want:#x}")));
    }
    let Some(code) = build_stub(plan, stub) else {
        let _ = remote_munmap(t, stub, PAGE_SIZE);
        return Err(ProbeError::Inject("stub does not fit or is out of jump range".into()));
    };
    t.write_memory(stub, &code)?;

    let mut patch = vec![0xE9];
    patch.extend_from_slice(&rel32(plan.addr + JMP_REL32_LEN as u64, stub).ok_or_else(|| {
        ProbeError::Inject("stub out of rel32 range".into())
    })?);
    patch.resize(plan.displaced_len, 0xCC);
    t.write_memory(plan.addr, &patch)?;
    t.occupancy_mut().probe_windows.push(plan.window());
    Ok(ProbeSite { plan: plan.clone(), stub_addr: stub, counter_addr: stub + COUNTER_OFFSET, active: true })
}

pub fn read_probe_counter(t: &TargetProcess, site: &ProbeSite) -> Result<u64> {
    if !site.active {
        return Err(ProbeError::Inactive);
    }
    Ok(t.read_u64(site.counter_addr)?)
}

/// Restores the site and unmaps the stub. Returns the final counter value.
pub fn remove_probe(t: &mut TargetProcess, site: &mut ProbeSite) -> Result<u64> {
    if !site.active {
        return Err(ProbeError::Inactive);
    }
    let pc = t.pc()?;
    if site.plan.window().contains(&pc) || (site.stub_addr..site.stub_addr + PAGE_SIZE).contains(&pc) {
        return Err(ProbeError::PcInWindow { pc });
    }
    let count = t.read_u64(site.counter_addr)?;
    t.write_memory(site.plan.addr, &site.plan.displaced_bytes)?;
    let window = site.plan.window();
    t.occupancy_mut().probe_windows.retain(|w| *w != window);
    site.active = false;
    remote_munmap(t, site.stub_addr, PAGE_SIZE)?;
    Ok(count)
}
