//! Session portfolio: one pretty-printed JSON file per session.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::domain::{SessionId, SessionStatus, StorySession};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session `{id}` is corrupt at line {line}, column {column}: {message}")]
    CorruptPortfolio {
        id: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("portfolio i/o at {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl StoreError {
    pub fn class(&self) -> crate::error::ErrorClass {
        use crate::error::ErrorClass;
        match self {
            StoreError::NotFound(_) => ErrorClass::NotFound,
            StoreError::CorruptPortfolio { .. } | StoreError::Io { .. } => ErrorClass::Storage,
        }
    }
}

/// A row of the portfolio listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub status: Option<SessionStatus>,
    pub beats: usize,
    pub target_beats: usize,
    pub words: usize,
    /// Set when the file could not be read back.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corrupt: Option<String>,
}

#[derive(Debug, Clone)]
pub struct PortfolioStore {
    dir: PathBuf,
}

impl PortfolioStore {
    /// Open (creating if needed) a portfolio directory.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|source| StoreError::Io { path: dir.clone(), source })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, id: &SessionId) -> PathBuf {
        self.dir.join(format!("{}.json", id.as_str()))
    }

    /// Write the whole session. The file is replaced by rename, so a reader
    /// or a crash sees either the old or the new version.
    pub fn save(&self, session: &StorySession) -> Result<(), StoreError> {
        let path = self.path_for(&session.session_id);
        let io_err = |source| StoreError::Io { path: path.clone(), source };
        let json = serde_json::to_vec_pretty(session).expect("session serializes");
        let mut tmp = NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        tmp.write_all(&json).map_err(io_err)?;
        tmp.write_all(b"\n").map_err(io_err)?;
        tmp.as_file().sync_all().map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }

    pub fn exists(&self, id: &SessionId) -> bool {
        self.path_for(id).is_file()
    }

    pub fn load(&self, id: &SessionId) -> Result<StorySession, StoreError> {
        let path = self.path_for(id);
        let bytes = match fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Err(StoreError::NotFound(id.as_str().to_owned())),
            Err(source) => return Err(StoreError::Io { path, source }),
        };
        serde_json::from_slice(&bytes).map_err(|e| StoreError::CorruptPortfolio {
            id: id.as_str().to_owned(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    /// Session ids in the portfolio, sorted.
    pub fn ids(&self) -> Result<Vec<SessionId>, StoreError> {
        let entries = fs::read_dir(&self.dir).map_err(|source| StoreError::Io { path: self.dir.clone(), source })?;
        let mut ids: Vec<SessionId> = entries
            .filter_map(Result::ok)
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                SessionId::new(name.strip_suffix(".json")?).ok()
            })
            .collect();
        ids.sort();
        Ok(ids)
    }

    /// Every session, corrupt files marked rather than skipped.
    pub fn list(&self) -> Result<Vec<SessionSummary>, StoreError> {
        Ok(self
            .ids()?
            .into_iter()
            .map(|id| match self.load(&id) {
                Ok(s) => SessionSummary {
                    session_id: id.as_str().to_owned(),
                    status: Some(s.status),
                    beats: s.beats.len(),
                    target_beats: usize::from(s.sparkle.target_beat_count),
                    words: s.segments.iter().map(|g| g.word_count).sum(),
                    corrupt: None,
                },
                Err(e) => SessionSummary {
                    session_id: id.as_str().to_owned(),
                    status: None,
                    beats: 0,
                    target_beats: 0,
                    words: 0,
                    corrupt: Some(e.to_string()),
                },
            })
            .collect())
    }

    /// Every readable session; corrupt ones are skipped with a warning.
    pub fn load_all(&self) -> Result<Vec<StorySession>, StoreError> {
        let mut sessions = Vec::new();
        for id in self.ids()? {
            match self.load(&id) {
                Ok(s) => sessions.push(s),
                Err(e) => tracing::warn!(error = %e, "skipping session"),
            }
        }
        Ok(sessions)
    }
}
