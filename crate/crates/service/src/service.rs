//! Session operations independent of the transport.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use nqr_core::{EntityId, Label};
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, QueryRef, QuerySummary, RerankerChoice};
use crate::error::{Result, ServiceError};
use crate::session::{Event, RankingPage, Session, SessionMetadata, View};
use crate::store::{Snapshot, Store};

pub const DEFAULT_TOP_K: usize = 10;

/// One session: writers serialize on `writer`; readers clone the latest view.
struct Slot {
    writer: Mutex<Session>,
    view: RwLock<Arc<View>>,
}

pub struct SessionService {
    catalog: Arc<Catalog>,
    sessions: RwLock<HashMap<String, Arc<Slot>>>,
    store: Option<Store>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    #[serde(flatten)]
    pub query: QueryRef,
    pub reranker: RerankerChoice,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreferenceRequest {
    pub entity: u32,
    pub label: u8,
    #[serde(default)]
    pub expected_revision: Option<u64>,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityEntry {
    pub id: EntityId,
    pub label: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EntityPage {
    pub total: usize,
    pub offset: usize,
    pub entities: Vec<EntityEntry>,
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

impl SessionService {
    pub fn in_memory(catalog: Arc<Catalog>) -> Self {
        Self {
            catalog,
            sessions: RwLock::new(HashMap::new()),
            store: None,
        }
    }

    /// Opens a persistent service, replaying every stored session.
    pub fn open(catalog: Arc<Catalog>, store: Store) -> Result<Self> {
        let mut sessions = HashMap::new();
        for id in store.sessions()? {
            let events = store.read_events(&id)?;
            let session = Session::replay(&catalog, &events)?;
            let snapshot = Snapshot::of(&session.view);
            match store.read_snapshot(&id)? {
                Some(s) if s == snapshot => {}
                Some(_) => {
                    tracing::warn!(session = %id, "snapshot disagrees with event log; rewriting from log");
                    store.write_snapshot(&snapshot)?;
                }
                None => store.write_snapshot(&snapshot)?,
            }
            sessions.insert(id, Arc::new(slot(session)));
        }
        tracing::info!(sessions = sessions.len(), dir = %store.dir().display(), "session store opened");
        Ok(Self {
            catalog,
            sessions: RwLock::new(sessions),
            store: Some(store),
        })
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("unknown session {id}")))
    }

    pub fn view(&self, id: &str) -> Result<Arc<View>> {
        Ok(self.slot(id)?.view.read().expect("view lock").clone())
    }

    fn persist(&self, session: &Session, event: &Event) -> Result<()> {
        if let Some(store) = &self.store {
            store.append(&session.view.id, event)?;
            store.write_snapshot(&Snapshot::of(&session.view))?;
        }
        Ok(())
    }

    pub fn create(&self, req: &CreateRequest) -> Result<RankingPage> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::create(&self.catalog, id.clone(), req.query.clone(), &req.reranker, now_ms())?;
        self.persist(&session, &session.events[0])?;
        let page = session
            .view
            .page(&self.catalog, req.top_k.unwrap_or(DEFAULT_TOP_K), 0);
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id, Arc::new(slot(session)));
        Ok(page)
    }

    fn mutate(&self, id: &str, expected: Option<u64>, event: Event) -> Result<Arc<View>> {
        let slot = self.slot(id)?;
        let mut writer = slot.writer.lock().expect("session writer lock");
        let actual = writer.view.revision();
        if let Some(expected) = expected {
            if expected != actual {
                return Err(ServiceError::StaleRevision { expected, actual });
            }
        }
        let next = writer.with_event(&self.catalog, event.clone())?;
        self.persist(&next, &event)?;
        let view = next.view.clone();
        *writer = next;
        *slot.view.write().expect("view lock") = view.clone();
        Ok(view)
    }

    pub fn submit(&self, id: &str, req: &PreferenceRequest) -> Result<RankingPage> {
        let label = Label::try_from(req.label).map_err(ServiceError::BadRequest)?;
        let event = Event::Preference {
            entity: EntityId(req.entity),
            label,
            at_ms: now_ms(),
        };
        let view = self.mutate(id, req.expected_revision, event)?;
        Ok(view.page(&self.catalog, req.top_k.unwrap_or(DEFAULT_TOP_K), 0))
    }

    pub fn undo(&self, id: &str, expected: Option<u64>, top_k: Option<usize>) -> Result<RankingPage> {
        let view = self.mutate(id, expected, Event::Undo { at_ms: now_ms() })?;
        Ok(view.page(&self.catalog, top_k.unwrap_or(DEFAULT_TOP_K), 0))
    }

    pub fn ranking(&self, id: &str, top_k: Option<usize>, offset: Option<usize>) -> Result<RankingPage> {
        Ok(self
            .view(id)?
            .page(&self.catalog, top_k.unwrap_or(DEFAULT_TOP_K), offset.unwrap_or(0)))
    }

    pub fn metadata(&self, id: &str) -> Result<SessionMetadata> {
        let slot = self.slot(id)?;
        let reranker = slot.writer.lock().expect("session writer lock").reranker.clone();
        let view = slot.view.read().expect("view lock").clone();
        let trace = view.trace(reranker.as_ref())?;
        Ok(view.metadata(trace))
    }

    /// The session's full event log.
    pub fn events(&self, id: &str) -> Result<Vec<Event>> {
        Ok(self.slot(id)?.writer.lock().expect("session writer lock").events.clone())
    }

    pub fn queries(&self) -> Vec<QuerySummary> {
        self.catalog.queries().collect()
    }

    pub fn entities(&self, offset: Option<usize>, limit: Option<usize>) -> EntityPage {
        let labels = self.catalog.labels();
        let offset = offset.unwrap_or(0);
        let entities = labels
            .iter()
            .enumerate()
            .skip(offset)
            .take(limit.unwrap_or(labels.len()))
            .map(|(i, l)| EntityEntry {
                id: EntityId(i as u32),
                label: l.clone(),
            })
            .collect();
        EntityPage {
            total: labels.len(),
            offset,
            entities,
        }
    }
}

fn slot(session: Session) -> Slot {
    Slot {
        view: RwLock::new(session.view.clone()),
        writer: Mutex::new(session),
    }
}
