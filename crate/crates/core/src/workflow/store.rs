//! Append-only per-project event logs.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use super::types::EventRecord;
use super::EngineError;

/// Persistence for event logs. Appends must be durable before returning.
pub trait EventStore: Send + Sync {
    fn append(&self, project_id: &str, record: &EventRecord) -> Result<(), EngineError>;
    fn load(&self, project_id: &str) -> Result<Vec<EventRecord>, EngineError>;
    fn project_ids(&self) -> Result<Vec<String>, EngineError>;
}

fn encode(record: &EventRecord) -> Result<String, EngineError> {
    serde_json::to_string(record).map_err(|e| EngineError::Storage(e.to_string()))
}

fn decode(project_id: &str, line_no: usize, line: &str) -> Result<EventRecord, EngineError> {
    serde_json::from_str(line).map_err(|e| EngineError::Replay {
        project: project_id.to_owned(),
        seq: line_no as u64,
        message: format!("line {line_no}: {e}"),
    })
}

/// In-process store holding the serialized lines, for tests and simulations.
#[derive(Default)]
pub struct MemoryStore {
    logs: Mutex<BTreeMap<String, Vec<String>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Raw JSONL text of a project's log.
    pub fn raw(&self, project_id: &str) -> Option<String> {
        let logs = self.logs.lock().expect("store lock");
        logs.get(project_id).map(|lines| {
            let mut s = lines.join("\n");
            s.push('\n');
            s
        })
    }
}

impl EventStore for MemoryStore {
    fn append(&self, project_id: &str, record: &EventRecord) -> Result<(), EngineError> {
        let line = encode(record)?;
        self.logs
            .lock()
            .expect("store lock")
            .entry(project_id.to_owned())
            .or_default()
            .push(line);
        Ok(())
    }

    fn load(&self, project_id: &str) -> Result<Vec<EventRecord>, EngineError> {
        let logs = self.logs.lock().expect("store lock");
        let lines = logs
            .get(project_id)
            .ok_or_else(|| EngineError::UnknownProject(project_id.to_owned()))?;
        lines
            .iter()
            .enumerate()
            .map(|(i, l)| decode(project_id, i + 1, l))
            .collect()
    }

    fn project_ids(&self) -> Result<Vec<String>, EngineError> {
        Ok(self.logs.lock().expect("store lock").keys().cloned().collect())
    }
}

/// `<root>/projects/<id>/events.jsonl`, one JSON record per line.
pub struct FileStore {
    root: PathBuf,
    // Serializes appends from different projects' writers onto open handles.
    handles: Mutex<BTreeMap<String, File>>,
}

impl FileStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, EngineError> {
        let root = root.into();
        fs::create_dir_all(root.join("projects")).map_err(|e| io_error(&root, e))?;
        Ok(Self {
            root,
            handles: Mutex::new(BTreeMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn log_path(&self, project_id: &str) -> PathBuf {
        self.root.join("projects").join(project_id).join("events.jsonl")
    }
}

fn io_error(path: &Path, e: std::io::Error) -> EngineError {
    EngineError::Storage(format!("{}: {e}", path.display()))
}

impl EventStore for FileStore {
    fn append(&self, project_id: &str, record: &EventRecord) -> Result<(), EngineError> {
        let mut line = encode(record)?;
        line.push('\n');
        let path = self.log_path(project_id);
        let mut handles = self.handles.lock().expect("store lock");
        if !handles.contains_key(project_id) {
            let dir = path.parent().expect("log path has a parent");
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| io_error(&path, e))?;
            handles.insert(project_id.to_owned(), file);
        }
        let file = handles.get_mut(project_id).expect("handle inserted");
        file.write_all(line.as_bytes()).map_err(|e| io_error(&path, e))?;
        file.flush().map_err(|e| io_error(&path, e))?;
        file.sync_data().map_err(|e| io_error(&path, e))?;
        Ok(())
    }

    fn load(&self, project_id: &str) -> Result<Vec<EventRecord>, EngineError> {
        let path = self.log_path(project_id);
        let file = File::open(&path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                EngineError::UnknownProject(project_id.to_owned())
            } else {
                io_error(&path, e)
            }
        })?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_error(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(decode(project_id, i + 1, &line)?);
        }
        Ok(out)
    }

    fn project_ids(&self) -> Result<Vec<String>, EngineError> {
        let dir = self.root.join("projects");
        let mut ids = Vec::new();
        for entry in fs::read_dir(&dir).map_err(|e| io_error(&dir, e))? {
            let entry = entry.map_err(|e| io_error(&dir, e))?;
            if entry.path().join("events.jsonl").is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_owned());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }
}
