//! Persistent state between runs.

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use ccl_core::engine::{EngineCheckpoint, ViolationRecord};
use ccl_core::followup::{FollowUpAction, FollowUpLedger};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const STATE_SCHEMA: &str = "ccl.run-state/1";

#[derive(Debug, Error)]
pub enum StateError {
    #[error("cannot access state file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("state file {path} is corrupt: {source}")]
    Corrupt {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("state file {path} has schema `{found}`, expected `{STATE_SCHEMA}`")]
    Schema { path: String, found: String },
}

impl StateError {
    pub fn is_io(&self) -> bool {
        matches!(self, StateError::Io { .. })
    }
}

/// Engine checkpoint plus everything emitted so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub schema: String,
    pub checkpoint: EngineCheckpoint,
    /// Every violation emitted by any run, in emission order.
    pub violations: Vec<ViolationRecord>,
    pub ledger: FollowUpLedger,
    /// Settled follow-up actions of every run.
    pub actions: Vec<FollowUpAction>,
    pub runs: u64,
}

impl Default for RunState {
    fn default() -> Self {
        RunState {
            schema: STATE_SCHEMA.to_string(),
            checkpoint: EngineCheckpoint::default(),
            violations: Vec::new(),
            ledger: FollowUpLedger::default(),
            actions: Vec::new(),
            runs: 0,
        }
    }
}

impl RunState {
    /// Loads the state at `path`, or a fresh state if the file does not exist.
    pub fn load(path: &Path) -> Result<Self, StateError> {
        let text = match fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(RunState::default()),
            Err(source) => return Err(StateError::Io { path: path.display().to_string(), source }),
        };
        let state: RunState = serde_json::from_str(&text)
            .map_err(|source| StateError::Corrupt { path: path.display().to_string(), source })?;
        if state.schema != STATE_SCHEMA {
            return Err(StateError::Schema { path: path.display().to_string(), found: state.schema });
        }
        Ok(state)
    }

    /// Replaces the file at `path` atomically.
    pub fn save(&self, path: &Path) -> Result<(), StateError> {
        let text = serde_json::to_string_pretty(self).expect("state serializes");
        write_atomic(path, text.as_bytes()).map_err(|source| StateError::Io { path: path.display().to_string(), source })
    }
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
