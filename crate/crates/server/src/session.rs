use crate::error::ApiError;
use formloop_core::protocol::{Event, EventEnvelope, SceneSnapshot, WindResult};
use formloop_core::scene::{validate_scene, Scene};
use formloop_core::se3::Pose;
use formloop_core::wind::{GridSpec, WindField};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use tokio::sync::broadcast;

const EVENT_BUFFER: usize = 4096;

pub struct Solved {
    pub run_id: u64,
    pub scene_version: u64,
    pub spec: GridSpec,
    pub field: Arc<WindField>,
}

/// Mutable session state. Every mutation and every event emission happens
/// under the session lock, so `seq` order equals application order.
pub struct SessionState {
    pub version: u64,
    pub scene: Arc<Scene>,
    pub wind: Option<Solved>,
    pub active_run: Option<u64>,
    next_run: u64,
    seq: u64,
    events: broadcast::Sender<EventEnvelope>,
}

impl SessionState {
    fn new(scene: Scene, version: u64) -> Self {
        let (events, _) = broadcast::channel(EVENT_BUFFER);
        Self {
            version,
            scene: Arc::new(scene),
            wind: None,
            active_run: None,
            next_run: 1,
            seq: 0,
            events,
        }
    }

    pub fn emit(&mut self, event: Event) {
        self.seq += 1;
        // No subscribers is not an error.
        let _ = self.events.send(EventEnvelope { seq: self.seq, event });
    }

    pub fn subscribe(&self) -> broadcast::Receiver<EventEnvelope> {
        self.events.subscribe()
    }

    /// Dirty iff no result is tagged with the current version.
    pub fn dirty(&self) -> bool {
        self.wind.as_ref().is_none_or(|w| w.scene_version != self.version)
    }

    pub fn snapshot(&self) -> SceneSnapshot {
        SceneSnapshot {
            version: self.version,
            scene: (*self.scene).clone(),
            dirty: self.dirty(),
            wind_version: self.wind.as_ref().map(|w| w.scene_version),
            warnings: validate_scene(&self.scene),
        }
    }

    pub fn set_pose(&mut self, block_id: &str, pose: Pose) -> Result<u64, ApiError> {
        if self.scene.block(block_id).is_none() {
            return Err(ApiError::UnknownBlock(block_id.to_string()));
        }
        let mut scene = (*self.scene).clone();
        scene.world_poses.insert(block_id.to_string(), pose);
        self.scene = Arc::new(scene);
        self.version += 1;
        self.emit(Event::SceneUpdated { version: self.version });
        Ok(self.version)
    }

    pub fn begin_run(&mut self) -> Result<u64, ApiError> {
        if self.active_run.is_some() {
            return Err(ApiError::RunActive);
        }
        let id = self.next_run;
        self.next_run += 1;
        self.active_run = Some(id);
        Ok(id)
    }

    pub fn wind_result(&self) -> Result<WindResult, ApiError> {
        let w = self.wind.as_ref().ok_or(ApiError::NoWindResult)?;
        Ok(WindResult::new(w.run_id, w.scene_version, w.scene_version != self.version, w.spec.clone(), &w.field))
    }
}

pub type Session = Arc<Mutex<SessionState>>;

/// Scene state persisted across restarts; wind results are not kept.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StoreSnapshot {
    pub next_id: u64,
    pub sessions: BTreeMap<String, PersistedSession>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistedSession {
    pub version: u64,
    pub scene: Scene,
}

#[derive(Default)]
pub struct Store {
    next_id: u64,
    sessions: BTreeMap<String, Session>,
}

impl Store {
    pub fn create(&mut self, scene: Scene) -> String {
        self.next_id += 1;
        let id = format!("s{}", self.next_id);
        self.sessions.insert(id.clone(), Arc::new(Mutex::new(SessionState::new(scene, 0))));
        id
    }

    pub fn get(&self, id: &str) -> Result<Session, ApiError> {
        self.sessions.get(id).cloned().ok_or_else(|| ApiError::UnknownSession(id.to_string()))
    }

    pub fn ids(&self) -> Vec<String> {
        self.sessions.keys().cloned().collect()
    }

    pub fn to_snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            next_id: self.next_id,
            sessions: self
                .sessions
                .iter()
                .map(|(id, s)| {
                    let s = s.lock().expect("session lock");
                    (id.clone(), PersistedSession { version: s.version, scene: (*s.scene).clone() })
                })
                .collect(),
        }
    }

    pub fn from_snapshot(snap: StoreSnapshot) -> Self {
        Self {
            next_id: snap.next_id,
            sessions: snap
                .sessions
                .into_iter()
                .map(|(id, p)| (id, Arc::new(Mutex::new(SessionState::new(p.scene, p.version)))))
                .collect(),
        }
    }
}
