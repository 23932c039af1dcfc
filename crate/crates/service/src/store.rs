use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex, RwLock};
use std::time::{Duration, Instant};

use ballast_core::imagecore::decode_image;
use ballast_core::pipeline::{Assets, PipelineConfig};
use tokio::sync::Mutex;

use crate::engine::SessionState;
use crate::ServeOptions;

pub struct Session {
    pub state: Arc<Mutex<SessionState>>,
    last_used: StdMutex<Instant>,
}

impl Session {
    fn new(state: SessionState) -> Self {
        Self {
            state: Arc::new(Mutex::new(state)),
            last_used: StdMutex::new(Instant::now()),
        }
    }

    fn touch(&self) {
        *self.last_used.lock().expect("clock lock") = Instant::now();
    }

    fn idle(&self) -> Duration {
        self.last_used.lock().expect("clock lock").elapsed()
    }
}

/// In-memory sessions, optionally mirrored to a directory so they survive
/// a restart.
pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Session>>>,
    ttl: Duration,
    spill_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(ttl: Duration, spill_dir: Option<PathBuf>) -> std::io::Result<Self> {
        let store = Self {
            sessions: RwLock::new(HashMap::new()),
            ttl,
            spill_dir,
        };
        if let Some(dir) = &store.spill_dir {
            std::fs::create_dir_all(dir)?;
            store.recover(dir);
        }
        Ok(store)
    }

    pub fn insert(&self, id: String, state: SessionState, upload: &[u8]) {
        if let Some(dir) = &self.spill_dir {
            if let Err(e) = std::fs::write(dir.join(format!("{id}.upload")), upload) {
                log::warn!("cannot spill session {id}: {e}");
            }
            self.spill_config(&id, state.config());
        }
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id, Arc::new(Session::new(state)));
    }

    /// Looks up a live session and marks it used.
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        let map = self.sessions.read().expect("session map lock");
        let s = map.get(id)?.clone();
        if s.idle() > self.ttl {
            return None;
        }
        s.touch();
        Some(s)
    }

    pub fn remove(&self, id: &str) -> bool {
        let removed = self
            .sessions
            .write()
            .expect("session map lock")
            .remove(id)
            .is_some();
        if removed {
            self.unspill(id);
        }
        removed
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Drops sessions idle longer than the TTL; returns how many.
    pub fn expire(&self) -> usize {
        let mut map = self.sessions.write().expect("session map lock");
        let dead: Vec<String> = map
            .iter()
            .filter(|(_, s)| s.idle() > self.ttl)
            .map(|(id, _)| id.clone())
            .collect();
        for id in &dead {
            map.remove(id);
            self.unspill(id);
        }
        dead.len()
    }

    pub fn spill_config(&self, id: &str, cfg: &PipelineConfig) {
        if let Some(dir) = &self.spill_dir {
            let text = serde_json::to_vec_pretty(cfg).expect("config serializes");
            if let Err(e) = std::fs::write(dir.join(format!("{id}.config.json")), text) {
                log::warn!("cannot spill config of session {id}: {e}");
            }
        }
    }

    fn unspill(&self, id: &str) {
        if let Some(dir) = &self.spill_dir {
            for name in [format!("{id}.upload"), format!("{id}.config.json")] {
                let _ = std::fs::remove_file(dir.join(name));
            }
        }
    }

    fn recover(&self, dir: &Path) {
        let Ok(entries) = std::fs::read_dir(dir) else { return };
        for entry in entries.flatten() {
            let path = entry.path();
            let Some(id) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".upload"))
            else {
                continue;
            };
            match restore(dir, id) {
                Ok(state) => {
                    log::info!("recovered session {id}");
                    self.sessions
                        .write()
                        .expect("session map lock")
                        .insert(id.to_string(), Arc::new(Session::new(state)));
                }
                Err(e) => log::warn!("skipping spilled session {id}: {e}"),
            }
        }
    }
}

fn restore(dir: &Path, id: &str) -> Result<SessionState, String> {
    let bytes = std::fs::read(dir.join(format!("{id}.upload"))).map_err(|e| e.to_string())?;
    let image = decode_image(&bytes, Path::new(id)).map_err(|e| e.to_string())?;
    let cfg: PipelineConfig = match std::fs::read(dir.join(format!("{id}.config.json"))) {
        Ok(text) => serde_json::from_slice(&text).map_err(|e| e.to_string())?,
        Err(_) => PipelineConfig::default(),
    };
    cfg.validate().map_err(|e| e.to_string())?;
    let assets = Assets::load(&cfg).map_err(|e| e.to_string())?;
    if image.height() < 3 {
        return Err("image too small".into());
    }
    Ok(SessionState::new(image, cfg, assets))
}

#[derive(Clone)]
pub struct AppState {
    pub store: Arc<SessionStore>,
    pub max_upload_bytes: usize,
}

impl AppState {
    pub fn new(opts: &ServeOptions) -> std::io::Result<Self> {
        Ok(Self {
            store: Arc::new(SessionStore::new(opts.session_ttl, opts.session_dir.clone())?),
            max_upload_bytes: opts.max_upload_mb * 1024 * 1024,
        })
    }

    /// Background task that expires idle sessions.
    pub fn spawn_reaper(&self) {
        let store = self.store.clone();
        let period = (store.ttl / 4).clamp(Duration::from_secs(1), Duration::from_secs(60));
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                let n = store.expire();
                if n > 0 {
                    log::info!("expired {n} idle sessions");
                }
            }
        });
    }
}
