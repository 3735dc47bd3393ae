//! Adapter for engines outside this toolkit. The command template gets
//! `{workload}` and `{out}` substituted; the tool writes `key=value` lines
//! to `{out}`: `wall_ns` and `event_count` are required, `cpu_child_ns`,
//! `cpu_tracer_ns`, `exit_status` and `instr_count` are optional.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Stdio};

use super::{unix_now_ns, HarnessError, RunRecord};
use crate::target::monotonic_ns;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExternalReport {
    pub wall_ns: u64,
    pub event_count: u64,
    pub cpu_child_ns: Option<u64>,
    pub cpu_tracer_ns: Option<u64>,
    pub exit_status: Option<i32>,
    pub instr_count: Option<u64>,
}

pub fn parse_report(text: &str) -> Result<ExternalReport, HarnessError> {
    let mut kv = HashMap::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Adapter(format!("line without `=`: {line:?}")))?;
        kv.insert(k.trim(), v.trim());
    }
    fn num<T: std::str::FromStr>(kv: &HashMap<&str, &str>, key: &str) -> Result<Option<T>, HarnessError> {
        kv.get(key)
            .map(|v| v.parse().map_err(|_| HarnessError::Adapter(format!("`{key}` is not a number: {v:?}"))))
            .transpose()
    }
    let required = |key: &str| HarnessError::Adapter(format!("missing `{key}`"));
    Ok(ExternalReport {
        wall_ns: num(&kv, "wall_ns")?.ok_or_else(|| required("wall_ns"))?,
        event_count: num(&kv, "event_count")?.ok_or_else(|| required("event_count"))?,
        cpu_child_ns: num(&kv, "cpu_child_ns")?,
        cpu_tracer_ns: num(&kv, "cpu_tracer_ns")?,
        exit_status: num(&kv, "exit_status")?,
        instr_count: num(&kv, "instr_count")?,
    })
}

/// Runs one external measurement and converts its report.
pub fn run_external(
    template: &str,
    spec_id: &str,
    workload: &Path,
    rep: u32,
    expected_count: Option<u64>,
) -> Result<RunRecord, HarnessError> {
    let dir = tempfile::tempdir().map_err(|e| HarnessError::Adapter(format!("temp dir: {e}")))?;
    let out = dir.path().join("report.txt");
    let cmd = template
        .replace("{workload}", &workload.to_string_lossy())
        .replace("{out}", &out.to_string_lossy());
    let timestamp = unix_now_ns();
    let start = monotonic_ns();
    let status = Command::new("sh")
        .arg("-c")
        .arg(&cmd)
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .status()
        .map_err(|e| HarnessError::Adapter(format!("cannot run `{cmd}`: {e}")))?;
    let end = monotonic_ns();
    if !status.success() {
        return Err(HarnessError::Adapter(format!("`{cmd}` exited with {status}")));
    }
    let text = std::fs::read_to_string(&out)
        .map_err(|e| HarnessError::Adapter(format!("no report at {}: {e}", out.display())))?;
    let r = parse_report(&text)?;
    Ok(RunRecord {
        spec_id: spec_id.to_owned(),
        rep,
        technique: "external".into(),
        primitive: None,
        workload: workload.display().to_string(),
        wall_ns: r.wall_ns,
        cpu_child_ns: r.cpu_child_ns,
        cpu_tracer_ns: r.cpu_tracer_ns,
        combined_cpu_ns: r.cpu_child_ns.zip(r.cpu_tracer_ns).map(|(a, b)| a + b),
        event_count: r.event_count,
        expected_count,
        instr_count: r.instr_count,
        truncated: false,
        exit_status: r.exit_status,
        proc_before: None,
        proc_after: None,
        timestamp,
        span_ns: (start, end),
        external: true,
        native: false,
        contended: false,
        error: None,
    })
}
