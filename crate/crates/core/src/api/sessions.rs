//! Live battles, held in memory.
//!
//! Each session sits behind its own mutex, so transitions on one battle are
//! serialized while different battles proceed in parallel. Sessions idle for
//! longer than the timeout are failed as abandoned; finished sessions idle for
//! longer than the timeout are dropped.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use uuid::Uuid;

use crate::session::{BattleSession, Clock};

pub const ABANDONED: &str = "abandoned";

pub type SessionHandle = Arc<Mutex<BattleSession>>;

#[derive(Debug, Default)]
pub struct SessionStore {
    sessions: RwLock<HashMap<Uuid, SessionHandle>>,
}

/// What one sweep did.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SweepOutcome {
    pub abandoned: usize,
    pub evicted: usize,
}

impl SessionStore {
    pub fn insert(&self, session: BattleSession) -> SessionHandle {
        let id = session.session_id();
        let handle = Arc::new(Mutex::new(session));
        self.sessions.write().unwrap().insert(id, Arc::clone(&handle));
        handle
    }

    pub fn get(&self, id: &Uuid) -> Option<SessionHandle> {
        self.sessions.read().unwrap().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sweep(&self, idle_timeout: Duration, clock: &dyn Clock) -> SweepOutcome {
        let now = clock.now();
        let limit = chrono::Duration::from_std(idle_timeout).unwrap_or(chrono::Duration::MAX);
        let idle = |t: DateTime<Utc>| now - t > limit;
        let mut outcome = SweepOutcome::default();
        let mut evict = Vec::new();
        for (id, handle) in self.sessions.read().unwrap().iter() {
            let mut s = handle.lock().unwrap();
            if !idle(s.updated_at()) {
                continue;
            }
            if s.state().is_terminal() {
                evict.push(*id);
            } else if s.fail(ABANDONED, clock).is_ok() {
                outcome.abandoned += 1;
            }
        }
        if !evict.is_empty() {
            let mut map = self.sessions.write().unwrap();
            for id in &evict {
                map.remove(id);
            }
            outcome.evicted = evict.len();
        }
        outcome
    }
}
