//! Append-only JSON Lines event logs, one file per stream.

use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use thiserror::Error;

use crate::model::{Event, STREAMS};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Corrupt { path: String, line: usize, message: String },
}

pub struct EventLog {
    dir: PathBuf,
    // Serializes appends so lines never interleave.
    lock: Mutex<()>,
}

impl EventLog {
    /// Opens (creating if needed) the log directory and returns every stored
    /// event, stream by stream in file order.
    pub fn open(dir: impl AsRef<Path>) -> Result<(Self, Vec<Event>), StoreError> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.display().to_string(), source })?;
        let mut events = Vec::new();
        for stream in STREAMS {
            events.extend(read_stream(&dir.join(format!("{stream}.jsonl")))?);
        }
        Ok((Self { dir, lock: Mutex::new(()) }, events))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, stream: &str) -> PathBuf {
        self.dir.join(format!("{stream}.jsonl"))
    }

    pub fn append(&self, event: &Event) -> Result<(), StoreError> {
        let path = self.path(event.stream());
        let io_err = |source| StoreError::Io { path: path.display().to_string(), source };
        let mut line = serde_json::to_string(event).expect("events serialize");
        line.push('\n');
        let _guard = self.lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut f = OpenOptions::new().create(true).append(true).open(&path).map_err(io_err)?;
        f.write_all(line.as_bytes()).map_err(io_err)?;
        f.sync_data().map_err(io_err)
    }
}

/// Reads one stream. A final line cut off by a crash is skipped with a
/// warning; a bad line anywhere else is an error.
pub fn read_stream(path: &Path) -> Result<Vec<Event>, StoreError> {
    let raw = match fs::read_to_string(path) {
        Ok(r) => r,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(source) => return Err(StoreError::Io { path: path.display().to_string(), source }),
    };
    let complete = raw.ends_with('\n');
    let lines: Vec<&str> = raw.lines().collect();
    let mut out = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(e) => out.push(e),
            Err(e) if i + 1 == lines.len() && !complete => {
                log::warn!("{}: ignoring truncated final line: {e}", path.display());
            }
            Err(e) => {
                return Err(StoreError::Corrupt { path: path.display().to_string(), line: i + 1, message: e.to_string() })
            }
        }
    }
    Ok(out)
}
