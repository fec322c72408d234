use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::canon;
use crate::{Error, Result};

/// Record of one stage execution. Everything here is a function of the
/// stage's inputs and parameters, so reruns produce identical bytes; wall
/// time goes to the run log instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub tool_version: String,
    pub params_hash: String,
    /// Input name -> SHA-256 of the file.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the work dir) -> SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub count_in: usize,
    pub count_out: usize,
    pub telemetry: BTreeMap<String, Value>,
}

impl StageManifest {
    pub fn read(path: &Path) -> Result<Option<Self>> {
        match std::fs::read_to_string(path) {
            Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::jsonl::write_bytes(path, canon::to_canonical_json_pretty(self)?.as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunLogEntry {
    pub stage: String,
    pub skipped: bool,
    pub wall_time_ms: u64,
    pub started_unix_ms: u64,
}

pub fn append_run_log(path: &Path, entry: &RunLogEntry) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let mut line = canon::to_canonical_json(entry)?;
    line.push('\n');
    file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))
}
