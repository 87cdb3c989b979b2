//! Upload sessions, each owning `temp_root/<id>/{input,output}`.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, SystemTime};

use crate::error::{ServiceError, ServiceResult};
use crate::pipeline::{is_hex_id, random_hex_id};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub filename: String,
    pub size: usize,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub created: SystemTime,
    pub input_dir: PathBuf,
    pub output_dir: PathBuf,
    pub images: Vec<ImageRecord>,
}

impl Session {
    /// Stores PNG bytes under the input directory and returns the new image id.
    pub fn add_image(&mut self, filename: &str, bytes: &[u8]) -> ServiceResult<String> {
        let id = loop {
            let id = random_hex_id(64);
            if !self.images.iter().any(|r| r.id == id) {
                break id;
            }
        };
        std::fs::write(self.input_dir.join(format!("{id}.png")), bytes)?;
        self.images.push(ImageRecord {
            id: id.clone(),
            filename: filename.to_string(),
            size: bytes.len(),
        });
        Ok(id)
    }

    pub fn image_path(&self, image_id: &str) -> ServiceResult<PathBuf> {
        if !self.images.iter().any(|r| r.id == image_id) {
            return Err(ServiceError::not_found("image", image_id));
        }
        Ok(self.input_dir.join(format!("{image_id}.png")))
    }

    /// Writes an output PNG and returns its id.
    pub fn write_artifact(&mut self, png: &[u8]) -> ServiceResult<String> {
        let id = loop {
            let id = random_hex_id(64);
            if !self.output_dir.join(format!("{id}.png")).exists() {
                break id;
            }
        };
        std::fs::write(self.output_dir.join(format!("{id}.png")), png)?;
        Ok(id)
    }

    pub fn artifact_path(&self, png_id: &str) -> ServiceResult<PathBuf> {
        let path = self.output_dir.join(format!("{png_id}.png"));
        if !is_hex_id(png_id) || !path.is_file() {
            return Err(ServiceError::not_found("artifact", png_id));
        }
        Ok(path)
    }
}

pub type SessionHandle = Arc<tokio::sync::Mutex<Session>>;

struct Entry {
    created: SystemTime,
    handle: SessionHandle,
}

/// All live sessions. Holding a session's lock (uploads, jobs) keeps the
/// cleanup sweep away from it.
pub struct SessionStore {
    root: PathBuf,
    ttl: Duration,
    sessions: Mutex<HashMap<String, Entry>>,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>, ttl: Duration) -> Self {
        SessionStore {
            root: root.into(),
            ttl,
            sessions: Mutex::new(HashMap::new()),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn expired(&self, created: SystemTime, now: SystemTime) -> bool {
        now.duration_since(created).is_ok_and(|age| age >= self.ttl)
    }

    pub fn create(&self, now: SystemTime) -> ServiceResult<String> {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let id = loop {
            let id = random_hex_id(128);
            if !sessions.contains_key(&id) && !self.root.join(&id).exists() {
                break id;
            }
        };
        let dir = self.root.join(&id);
        let input_dir = dir.join("input");
        let output_dir = dir.join("output");
        std::fs::create_dir_all(&input_dir)?;
        std::fs::create_dir_all(&output_dir)?;
        let session = Session {
            id: id.clone(),
            created: now,
            input_dir,
            output_dir,
            images: Vec::new(),
        };
        sessions.insert(
            id.clone(),
            Entry {
                created: now,
                handle: Arc::new(tokio::sync::Mutex::new(session)),
            },
        );
        log::info!("session {id} created");
        Ok(id)
    }

    /// Looks up a live session; expired ones count as missing.
    pub fn get(&self, id: &str, now: SystemTime) -> ServiceResult<SessionHandle> {
        let sessions = self.sessions.lock().expect("session map poisoned");
        match sessions.get(id) {
            Some(e) if !self.expired(e.created, now) => Ok(e.handle.clone()),
            _ => Err(ServiceError::not_found("session", id)),
        }
    }

    pub fn len(&self) -> usize {
        self.sessions.lock().expect("session map poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Removes sessions whose age is at least the TTL, skipping any that are
    /// locked by an in-flight request. Returns how many were purged.
    pub fn cleanup(&self, now: SystemTime) -> usize {
        let mut sessions = self.sessions.lock().expect("session map poisoned");
        let expired: Vec<String> = sessions
            .iter()
            .filter(|(_, e)| self.expired(e.created, now))
            .map(|(id, _)| id.clone())
            .collect();
        let mut purged = 0;
        for id in expired {
            let handle = sessions[&id].handle.clone();
            let Ok(guard) = handle.try_lock() else {
                log::debug!("session {id} busy, cleanup deferred");
                continue;
            };
            let dir = self.root.join(&id);
            if let Err(e) = std::fs::remove_dir_all(&dir) {
                if e.kind() != std::io::ErrorKind::NotFound {
                    log::warn!("could not remove {}: {e}", dir.display());
                }
            }
            drop(guard);
            sessions.remove(&id);
            purged += 1;
        }
        if purged > 0 {
            log::info!("purged {purged} expired session(s)");
        }
        purged
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(ttl: u64) -> (tempfile::TempDir, SessionStore) {
        let dir = tempfile::tempdir().unwrap();
        let s = SessionStore::new(dir.path().join("sessions"), Duration::from_secs(ttl));
        (dir, s)
    }

    #[test]
    fn layout_and_distinct_ids() {
        let (_d, s) = store(60);
        let now = SystemTime::now();
        let a = s.create(now).unwrap();
        let b = s.create(now).unwrap();
        assert_ne!(a, b);
        assert_eq!(a.len(), 32);
        assert!(s.root().join(&a).join("input").is_dir());
        assert!(s.root().join(&a).join("output").is_dir());
    }

    #[test]
    fn expiry_boundary() {
        let (_d, s) = store(10);
        let t0 = SystemTime::UNIX_EPOCH + Duration::from_secs(1_000);
        let id = s.create(t0).unwrap();
        assert!(s.get(&id, t0 + Duration::from_secs(9)).is_ok());
        assert_eq!(s.cleanup(t0 + Duration::from_secs(9)), 0);
        assert!(s.get(&id, t0 + Duration::from_secs(10)).is_err());
        assert_eq!(s.cleanup(t0 + Duration::from_secs(10)), 1);
        assert!(!s.root().join(&id).exists());
        assert!(s.is_empty());
    }

    #[test]
    fn cleanup_skips_locked_sessions() {
        let (_d, s) = store(1);
        let t0 = SystemTime::UNIX_EPOCH + Duration::from_secs(1_000);
        let id = s.create(t0).unwrap();
        let handle = s.get(&id, t0).unwrap();
        let guard = handle.try_lock().unwrap();
        assert_eq!(s.cleanup(t0 + Duration::from_secs(5)), 0);
        assert!(s.root().join(&id).exists());
        drop(guard);
        assert_eq!(s.cleanup(t0 + Duration::from_secs(5)), 1);
    }

    #[test]
    fn images_and_artifacts_stay_inside_the_session() {
        let (_d, s) = store(60);
        let now = SystemTime::now();
        let id = s.create(now).unwrap();
        let handle = s.get(&id, now).unwrap();
        let mut session = handle.try_lock().unwrap();
        let img = session.add_image("../../etc/passwd", b"png").unwrap();
        let path = session.image_path(&img).unwrap();
        assert!(path.starts_with(s.root().join(&id).join("input")));
        let art = session.write_artifact(b"out").unwrap();
        assert!(session.artifact_path(&art).unwrap().starts_with(s.root().join(&id).join("output")));
        assert!(session.artifact_path("../input").is_err());
        assert!(session.image_path("nope").is_err());
    }
}
