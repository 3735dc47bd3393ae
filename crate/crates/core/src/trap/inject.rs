//! Remote syscalls: run one `syscall` instruction in the target's context
//! with the tracer's arguments, then put everything back.

use crate::target::{page_floor, ResumeMode, StopKind, TargetProcess, PAGE_SIZE};

use super::{Result, TrapError};

const SYSCALL_INSN: [u8; 2] = [0x0F, 0x05];
const SCAN_LIMIT: u64 = 64 * 1024;

/// Executes syscall `nr` in the target and returns its raw result
/// (negative errno on failure). Registers and any patched bytes are
/// restored before returning.
pub fn inject_syscall(t: &mut TargetProcess, nr: i64, args: [u64; 6]) -> Result<i64> {
    let saved = t.raw_regs()?;
    let site = syscall_site(t)?;
    let orig = t.read_memory(site, 2)?;
    let patched = orig[..] != SYSCALL_INSN;
    if patched {
        t.write_memory(site, &SYSCALL_INSN)?;
    }

    let mut regs = saved;
    regs.rip = site;
    regs.rax = nr as u64;
    regs.orig_rax = u64::MAX;
    regs.rdi = args[0];
    regs.rsi = args[1];
    regs.rdx = args[2];
    regs.r10 = args[3];
    regs.r8 = args[4];
    regs.r9 = args[5];
    let outcome = t.set_raw_regs(regs).and_then(|_| t.resume_wait(ResumeMode::Step, None));

    let result = match outcome {
        Ok(ev) if ev.kind == StopKind::SingleStep && ev.pc == site + 2 => Ok(t.raw_regs()?.rax as i64),
        Ok(ev) if ev.is_terminal() => return Err(TrapError::UnexpectedStop(ev)),
        Ok(ev) => Err(TrapError::Inject(format!("syscall {nr} stopped with {:?} at {:#x}", ev.kind, ev.pc))),
        Err(e) => Err(e.into()),
    };
    if patched {
        t.write_memory(site, &orig)?;
    }
    t.set_raw_regs(saved)?;
    result
}

/// An executable address that can host a `syscall`, preferring one whose
/// bytes already encode it.
fn syscall_site(t: &mut TargetProcess) -> Result<u64> {
    if let Some(site) = t.syscall_site() {
        if site_usable(t, site) {
            return Ok(site);
        }
        t.set_syscall_site(None);
    }
    let candidates: Vec<(u64, u64)> = t
        .memory_map()?
        .iter()
        .filter(|r| r.perms.exec && !matches!(r.path.as_deref(), Some("[vdso]" | "[vsyscall]")))
        .map(|r| (r.start, r.end))
        .collect();
    for &(start, end) in &candidates {
        let scan_end = end.min(start + SCAN_LIMIT);
        let Ok(bytes) = t.read_memory(start, (scan_end - start) as usize) else { continue };
        if let Some(off) = bytes.windows(2).position(|w| w == SYSCALL_INSN) {
            let site = start + off as u64;
            if site_usable(t, site) {
                t.set_syscall_site(Some(site));
                return Ok(site);
            }
        }
    }
    for &(start, end) in &candidates {
        let mut page = start;
        while page < end {
            if site_usable(t, page) {
                t.set_syscall_site(Some(page));
                return Ok(page);
            }
            page += PAGE_SIZE;
        }
    }
    Err(TrapError::Inject("no executable page available to host a syscall".into()))
}

fn site_usable(t: &TargetProcess, site: u64) -> bool {
    let occ = t.occupancy();
    let stripped = |a: u64| occ.trapped_pages.get(&page_floor(a)).copied().unwrap_or(false);
    !stripped(site)
        && !stripped(site + 1)
        && !occ.sw_breakpoints.contains(&site)
        && !occ.sw_breakpoints.contains(&(site + 1))
        && !occ.probe_windows.iter().any(|w| w.contains(&site) || w.contains(&(site + 1)))
}

fn check(nr: &str, ret: i64) -> Result<i64> {
    if (-4095..0).contains(&ret) {
        Err(TrapError::Inject(format!("{nr}: {}", nix::errno::Errno::from_raw(-ret as i32))))
    } else {
        Ok(ret)
    }
}

pub fn remote_mprotect(t: &mut TargetProcess, addr: u64, len: u64, prot: i32) -> Result<()> {
    let ret = inject_syscall(t, libc::SYS_mprotect, [addr, len, prot as u64, 0, 0, 0])?;
    check("mprotect", ret)?;
    t.invalidate_memory_map();
    Ok(())
}

pub fn remote_mmap(t: &mut TargetProcess, addr: u64, len: u64, prot: i32, flags: i32) -> Result<u64> {
    let ret = inject_syscall(t, libc::SYS_mmap, [addr, len, prot as u64, flags as u64, u64::MAX, 0])?;
    let ret = check("mmap", ret)?;
    t.invalidate_memory_map();
    Ok(ret as u64)
}

pub fn remote_munmap(t: &mut TargetProcess, addr: u64, len: u64) -> Result<()> {
    let ret = inject_syscall(t, libc::SYS_munmap, [addr, len, 0, 0, 0, 0])?;
    check("munmap", ret)?;
    t.invalidate_memory_map();
    Ok(())
}
