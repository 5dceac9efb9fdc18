//! Session storage: in memory, optionally mirrored to one JSON file per
//! session in a directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use chrono::Utc;
use tokio::sync::Mutex as AsyncMutex;

use super::{Session, SessionError, SessionResource};
use crate::registry::write_atomically;

pub const DEFAULT_TTL: Duration = Duration::from_secs(24 * 60 * 60);

pub type SessionHandle = Arc<AsyncMutex<Session>>;

#[derive(Debug)]
pub struct SessionStore {
    live: Mutex<HashMap<String, SessionHandle>>,
    dir: Option<PathBuf>,
    ttl: Duration,
}

impl SessionStore {
    pub fn in_memory(ttl: Duration) -> Self {
        SessionStore {
            live: Mutex::new(HashMap::new()),
            dir: None,
            ttl,
        }
    }

    /// A store persisted under `dir`, created if missing.
    pub fn persistent(dir: impl Into<PathBuf>, ttl: Duration) -> Result<Self, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| store_error(&dir, e))?;
        Ok(SessionStore {
            live: Mutex::new(HashMap::new()),
            dir: Some(dir),
            ttl,
        })
    }

    pub fn ttl(&self) -> Duration {
        self.ttl
    }

    fn path_for(&self, id: &str) -> Option<PathBuf> {
        // ids are uuids; anything else never touches the filesystem
        uuid::Uuid::parse_str(id).ok()?;
        self.dir.as_ref().map(|d| d.join(format!("{id}.json")))
    }

    fn expired(&self, s: &Session) -> bool {
        let ttl = chrono::Duration::from_std(self.ttl).unwrap_or(chrono::Duration::MAX);
        s.updated_at + ttl <= Utc::now()
    }

    pub async fn insert(&self, session: Session) -> Result<SessionHandle, SessionError> {
        self.persist(&session)?;
        let id = session.id.clone();
        let handle = Arc::new(AsyncMutex::new(session));
        self.live.lock().unwrap_or_else(|e| e.into_inner()).insert(id, handle.clone());
        Ok(handle)
    }

    /// The live handle for `id`; callers lock it to serialize work on one
    /// session.
    pub async fn handle(&self, id: &str) -> Result<SessionHandle, SessionError> {
        let found = self.live.lock().unwrap_or_else(|e| e.into_inner()).get(id).cloned();
        let handle = match found {
            Some(h) => h,
            None => {
                let loaded = self.load(id)?.ok_or_else(|| SessionError::SessionNotFound(id.into()))?;
                let mut live = self.live.lock().unwrap_or_else(|e| e.into_inner());
                live.entry(id.to_string())
                    .or_insert_with(|| Arc::new(AsyncMutex::new(loaded)))
                    .clone()
            }
        };
        let expired = self.expired(&*handle.lock().await);
        if expired {
            self.evict(id);
            return Err(SessionError::SessionNotFound(id.into()));
        }
        Ok(handle)
    }

    pub async fn get(&self, id: &str) -> Result<Session, SessionError> {
        let handle = self.handle(id).await?;
        let s = handle.lock().await.clone();
        Ok(s)
    }

    pub fn persist(&self, session: &Session) -> Result<(), SessionError> {
        let Some(path) = self.path_for(&session.id) else {
            return Ok(());
        };
        let json = serde_json::to_string_pretty(&SessionResource::from(session))
            .map_err(|e| SessionError::Store(e.to_string()))?;
        write_atomically(&path, &json).map_err(|e| store_error(&path, e))
    }

    fn load(&self, id: &str) -> Result<Option<Session>, SessionError> {
        let Some(path) = self.path_for(id) else {
            return Ok(None);
        };
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(store_error(&path, e)),
        };
        let res: SessionResource =
            serde_json::from_str(&text).map_err(|e| store_error(&path, e))?;
        Ok(Some(res.session))
    }

    fn evict(&self, id: &str) {
        self.live.lock().unwrap_or_else(|e| e.into_inner()).remove(id);
        if let Some(path) = self.path_for(id) {
            let _ = std::fs::remove_file(path);
        }
    }

    /// Drops every expired session; returns how many were removed.
    pub async fn sweep(&self) -> usize {
        let handles: Vec<(String, SessionHandle)> = self
            .live
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut n = 0;
        for (id, h) in handles {
            if self.expired(&*h.lock().await) {
                self.evict(&id);
                n += 1;
            }
        }
        n
    }

    pub fn len(&self) -> usize {
        self.live.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn store_error(path: &Path, e: impl std::fmt::Display) -> SessionError {
    SessionError::Store(format!("{}: {e}", path.display()))
}
