#![allow(dead_code)]

use std::fs::File;
use std::path::PathBuf;

use tempfile::TempDir;
use trapbench::workload::{write_workload, Pattern, WorkloadMetadata, WorkloadParams};
use trapbench::{Launch, ResumeMode, StopEvent, TargetProcess};

pub struct Built {
    pub dir: TempDir,
    pub exe: PathBuf,
    pub meta: WorkloadMetadata,
}

impl Built {
    pub fn stdout_path(&self) -> PathBuf {
        self.dir.path().join("stdout")
    }

    pub fn captured_stdout(&self) -> String {
        std::fs::read_to_string(self.stdout_path()).unwrap()
    }
}

pub fn build(k_exec: u64, k_mem: u64, total: u64, pattern: Pattern) -> Built {
    let dir = tempfile::tempdir().unwrap();
    let (exe, meta) = write_workload(dir.path(), &WorkloadParams::new(k_exec, k_mem, total, pattern)).unwrap();
    Built { dir, exe, meta }
}

/// Spawned stopped at entry, stdout captured to `stdout_path()`.
pub fn spawn(b: &Built) -> TargetProcess {
    let out = File::create(b.stdout_path()).unwrap();
    Launch::new(&b.exe).stdout(out).spawn().unwrap()
}

/// Spawned and stopped at main.
pub fn at_main(b: &Built) -> TargetProcess {
    let mut t = spawn(b);
    trapbench::trap::run_to(&mut t, b.meta.main_addr).unwrap();
    t
}

pub fn native_output(b: &Built) -> (String, i32) {
    let out = std::process::Command::new(&b.exe).output().unwrap();
    (String::from_utf8(out.stdout).unwrap(), out.status.code().unwrap_or(-1))
}

/// Continues until the target exits, passing every stop to `on_stop`,
/// which returns the signal to deliver (if any). Returns the exit code.
pub fn run_to_exit<F>(t: &mut TargetProcess, mut on_stop: F) -> i32
where
    F: FnMut(&mut TargetProcess, &StopEvent) -> Option<i32>,
{
    let mut deliver = None;
    loop {
        let ev = t.resume_wait(ResumeMode::Continue, deliver.take()).unwrap();
        match ev.kind {
            trapbench::StopKind::Exited(code) => return code,
            trapbench::StopKind::Killed(sig) => return 128 + sig,
            _ => deliver = on_stop(t, &ev),
        }
    }
}
