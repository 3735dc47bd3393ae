//! Manifest format for hand-written C fixture programs.
//!
//! Only the interchange format and the post-build symbol check live here.
//! Building the corpus is left to the fixtures' own build glue.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::target::SymbolTable;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {reason}")]
    Read { path: PathBuf, reason: String },
    #[error("{fixture}: symbol `{symbol}` missing from {binary}")]
    MissingSymbol { fixture: String, symbol: String, binary: PathBuf },
    #[error("{0}: {1}")]
    Binary(PathBuf, String),
}

/// The symbols every fixture exports for instrumentation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureSymbols {
    #[serde(default = "default_main")]
    pub main: String,
    pub hot_insn_marker: String,
    pub hot_cell: String,
    #[serde(default = "default_exit")]
    pub exit: String,
}

fn default_main() -> String {
    "main".into()
}

fn default_exit() -> String {
    "exit".into()
}

impl FixtureSymbols {
    pub fn all(&self) -> [&str; 4] {
        [&self.main, &self.hot_insn_marker, &self.hot_cell, &self.exit]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureManifest {
    pub name: String,
    pub source: PathBuf,
    #[serde(default)]
    pub build_flags: Vec<String>,
    pub symbols: FixtureSymbols,
    /// Nominal event counts keyed by symbol name. Unlike generated
    /// workloads these are approximate.
    #[serde(default)]
    pub nominal_counts: BTreeMap<String, u64>,
    pub stdout_checksum: String,
}

impl FixtureManifest {
    /// Every exported symbol must be defined in the built binary.
    pub fn verify_symbols(&self, binary: &Path) -> Result<(), ManifestError> {
        let table =
            SymbolTable::from_file(binary).map_err(|reason| ManifestError::Binary(binary.to_path_buf(), reason))?;
        for sym in self.symbols.all() {
            if table.lookup(sym).is_none() {
                return Err(ManifestError::MissingSymbol {
                    fixture: self.name.clone(),
                    symbol: sym.to_owned(),
                    binary: binary.to_path_buf(),
                });
            }
        }
        Ok(())
    }
}

/// Loads a JSON array of manifests.
pub fn load_manifests(path: &Path) -> Result<Vec<FixtureManifest>, ManifestError> {
    let read_err = |reason: String| ManifestError::Read { path: path.to_path_buf(), reason };
    let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
    serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))
}
