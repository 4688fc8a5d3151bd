//! On-disk persistence: one append-only JSON-lines event log per session and
//! a snapshot of the latest adjusted scores beside it.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::session::{Event, View};

const LOG_SUFFIX: &str = ".events.jsonl";
const SNAPSHOT_SUFFIX: &str = ".snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session: String,
    pub revision: u64,
    pub digest: String,
    pub adjusted: Vec<f64>,
}

impl Snapshot {
    pub fn of(view: &View) -> Self {
        Self {
            session: view.id.clone(),
            revision: view.revision(),
            digest: view.digest(),
            adjusted: view.adjusted.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Store {
    dir: PathBuf,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn log_path(&self, session: &str) -> PathBuf {
        self.dir.join(format!("{session}{LOG_SUFFIX}"))
    }

    pub fn snapshot_path(&self, session: &str) -> PathBuf {
        self.dir.join(format!("{session}{SNAPSHOT_SUFFIX}"))
    }

    pub fn append(&self, session: &str, event: &Event) -> Result<()> {
        let mut line = serde_json::to_vec(event).map_err(nqr_core::Error::from)?;
        line.push(b'\n');
        let mut f = OpenOptions::new().create(true).append(true).open(self.log_path(session))?;
        f.write_all(&line)?;
        f.sync_data()?;
        Ok(())
    }

    /// Replaces the snapshot atomically via a temporary file.
    pub fn write_snapshot(&self, snapshot: &Snapshot) -> Result<()> {
        let path = self.snapshot_path(&snapshot.session);
        let tmp = path.with_extension("tmp");
        let mut f = File::create(&tmp)?;
        serde_json::to_writer(&mut f, snapshot).map_err(nqr_core::Error::from)?;
        f.sync_data()?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn read_events(&self, session: &str) -> Result<Vec<Event>> {
        let f = File::open(self.log_path(session))
            .map_err(|_| ServiceError::NotFound(format!("no event log for session {session}")))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let ev = serde_json::from_str(&line).map_err(|e| nqr_core::Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            out.push(ev);
        }
        Ok(out)
    }

    pub fn read_snapshot(&self, session: &str) -> Result<Option<Snapshot>> {
        match File::open(self.snapshot_path(session)) {
            Ok(f) => Ok(Some(serde_json::from_reader(BufReader::new(f)).map_err(nqr_core::Error::from)?)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Ids of every session with an event log, sorted.
    pub fn sessions(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            if let Some(id) = name.to_str().and_then(|n| n.strip_suffix(LOG_SUFFIX)) {
                ids.push(id.to_string());
            }
        }
        ids.sort();
        Ok(ids)
    }
}
