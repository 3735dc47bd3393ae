use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::target::ProcSnapshot;

/// One measured run (or one failed attempt, with `error` set).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec_id: String,
    pub rep: u32,
    pub technique: String,
    #[serde(default)]
    pub primitive: Option<String>,
    pub workload: String,
    pub wall_ns: u64,
    #[serde(default)]
    pub cpu_child_ns: Option<u64>,
    #[serde(default)]
    pub cpu_tracer_ns: Option<u64>,
    #[serde(default)]
    pub combined_cpu_ns: Option<u64>,
    pub event_count: u64,
    #[serde(default)]
    pub expected_count: Option<u64>,
    /// Instructions in the measured window, when known.
    #[serde(default)]
    pub instr_count: Option<u64>,
    pub truncated: bool,
    #[serde(default)]
    pub exit_status: Option<i32>,
    #[serde(default)]
    pub proc_before: Option<ProcSnapshot>,
    #[serde(default)]
    pub proc_after: Option<ProcSnapshot>,
    /// Wall-clock start of the run, ns since the Unix epoch.
    pub timestamp: u64,
    /// Monotonic bounds of the run, for checking that runs never overlap.
    #[serde(default)]
    pub span_ns: (u64, u64),
    #[serde(default)]
    pub external: bool,
    #[serde(default)]
    pub native: bool,
    #[serde(default)]
    pub contended: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunRecord {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    /// Events per 100M window instructions, from the expected count when
    /// known (it is not capped), else the measured one.
    pub fn freq_per_100m(&self) -> Option<f64> {
        let n = self.instr_count.filter(|&n| n > 0)?;
        Some(self.expected_count.unwrap_or(self.event_count) as f64 * 1e8 / n as f64)
    }

    /// The time the analysis uses: combined CPU, else child CPU, else wall.
    pub fn reference_ns(&self) -> u64 {
        self.combined_cpu_ns.or(self.cpu_child_ns).unwrap_or(self.wall_ns)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {source}")]
    Parse {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },
}

/// Append-only JSONL log of [`RunRecord`]s.
#[derive(Debug)]
pub struct ResultStore {
    path: PathBuf,
    file: File,
    records: Vec<RunRecord>,
}

impl ResultStore {
    /// Opens (creating if needed) a log. A torn final line from an
    /// interrupted append is dropped from the file.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let io = |source| StoreError::Io { path: path.clone(), source };
        let (records, valid_len) = if path.exists() { parse_log(&path)? } else { (Vec::new(), 0) };
        let file = OpenOptions::new().create(true).append(true).open(&path).map_err(io)?;
        if file.metadata().map_err(io)?.len() != valid_len {
            file.set_len(valid_len).map_err(io)?;
        }
        Ok(ResultStore { path, file, records })
    }

    /// Reads a log without opening it for writing.
    pub fn load(path: impl AsRef<Path>) -> Result<Vec<RunRecord>, StoreError> {
        Ok(parse_log(path.as_ref())?.0)
    }

    /// Appends and syncs before returning.
    pub fn append_record(&mut self, rec: &RunRecord) -> Result<(), StoreError> {
        let io = |source| StoreError::Io { path: self.path.clone(), source };
        let mut line = serde_json::to_vec(rec).expect("records always serialize");
        line.push(b'\n');
        self.file.write_all(&line).map_err(io)?;
        self.file.sync_data().map_err(io)?;
        self.records.push(rec.clone());
        Ok(())
    }

    pub fn records(&self) -> &[RunRecord] {
        &self.records
    }

    pub fn by_spec(&self) -> BTreeMap<&str, Vec<&RunRecord>> {
        let mut map: BTreeMap<&str, Vec<&RunRecord>> = BTreeMap::new();
        for r in &self.records {
            map.entry(r.spec_id.as_str()).or_default().push(r);
        }
        map
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

/// Parsed records plus the byte length of the intact prefix.
fn parse_log(path: &Path) -> Result<(Vec<RunRecord>, u64), StoreError> {
    let text = std::fs::read(path).map_err(|source| StoreError::Io { path: path.into(), source })?;
    let complete = text.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
    let mut records = Vec::new();
    for (i, line) in text[..complete].split(|&b| b == b'\n').enumerate() {
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let rec = serde_json::from_slice(line).map_err(|source| StoreError::Parse { path: path.into(), line: i + 1, source })?;
        records.push(rec);
    }
    Ok((records, complete as u64))
}
