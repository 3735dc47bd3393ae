use std::path::Path;
use std::process::{Command, Stdio};

use std::io::Read;
use std::os::unix::process::ExitStatusExt;

use super::HarnessError;
use crate::target::monotonic_ns;

/// An untraced run of a workload: its output and whole-process cost.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NativeRun {
    pub stdout: Vec<u8>,
    pub exit_status: i32,
    pub wall_ns: u64,
    /// User + system time from `wait4`.
    pub cpu_ns: u64,
    pub span_ns: (u64, u64),
}

/// Exit code, or 128 + signal for a signal death.
pub(crate) fn status_code(status: std::process::ExitStatus) -> i32 {
    status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

pub fn run_native(exe: &Path) -> Result<NativeRun, HarnessError> {
    let start = monotonic_ns();
    let mut child = Command::new(exe)
        .env_clear()
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| HarnessError::Native(format!("{}: {e}", exe.display())))?;
    let mut stdout = Vec::new();
    if let Some(mut out) = child.stdout.take() {
        out.read_to_end(&mut stdout).map_err(|e| HarnessError::Native(e.to_string()))?;
    }
    let mut status = 0;
    // SAFETY: zeroed rusage is a valid out-parameter.
    let mut usage: libc::rusage = unsafe { std::mem::zeroed() };
    let pid = child.id() as libc::pid_t;
    let rc = loop {
        // SAFETY: pid is our unreaped child; both pointers are valid.
        let rc = unsafe { libc::wait4(pid, &mut status, 0, &mut usage) };
        if rc == -1 && std::io::Error::last_os_error().raw_os_error() == Some(libc::EINTR) {
            continue;
        }
        break rc;
    };
    let end = monotonic_ns();
    if rc != pid {
        return Err(HarnessError::Native(format!("wait4: {}", std::io::Error::last_os_error())));
    }
    let tv = |t: libc::timeval| t.tv_sec as u64 * 1_000_000_000 + t.tv_usec as u64 * 1000;
    Ok(NativeRun {
        stdout,
        exit_status: status_code(std::process::ExitStatus::from_raw(status)),
        wall_ns: end - start,
        cpu_ns: tv(usage.ru_utime) + tv(usage.ru_stime),
        span_ns: (start, end),
    })
}
